"""Minimal reverse-mode differentiation for proof rescoring.

The tape records the exact computation that turns parameter rows into a
proof score (encoder MLPs, cosine similarity, t-norm folds) plus the
entailment loss on top. Values on the tape are floats or small numpy
arrays; gradients are accumulated per parameter slot.

A slot names one trainable array: ``("entity", row_id)``,
``("rulegoal", row_id)``, or ``("<mlp name>", "<field>")``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embeddings import MlpParams, ParameterSet, cosine, mlp_forward, scale_to_unit

Slot = tuple

CLAMP_LO = 1e-6
CLAMP_HI = 1.0 - 1e-6

_OP_ARITY = {
    "cosine_sim": 2,
    "scale_to_unit_interval": 1,
    "mlp_forward": 5,  # x, W1, b1, W2, b2
    "min": 2,
    "product": 2,
    "max": 2,
    "neg_log": 1,
    "one_minus": 1,
}


@dataclass
class Node:
    op: str  # "const", "leaf" or an entry of _OP_ARITY
    inputs: tuple[int, ...]
    value: float | np.ndarray
    slot: Optional[Slot] = None
    aux: object = None  # op-specific forward cache


class Tape:
    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._leaf_ids: dict[Slot, int] = {}
        # count of similarity steps replaced by a 0.5 constant because an
        # encoding collapsed to (near) zero norm; such tapes are not
        # finite-difference checkable at the collapse boundary
        self.degenerate_steps = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def value(self, nid: int):
        return self.nodes[nid].value

    def constant(self, value) -> int:
        self.nodes.append(Node("const", (), value))
        return len(self.nodes) - 1

    def leaf(self, slot: Slot, value: np.ndarray) -> int:
        """One tape node per slot; repeated uses share the node so the
        reverse pass accumulates naturally."""
        nid = self._leaf_ids.get(slot)
        if nid is None:
            self.nodes.append(Node("leaf", (), value, slot=slot))
            nid = len(self.nodes) - 1
            self._leaf_ids[slot] = nid
        return nid

    def record(self, op: str, *inputs: int) -> int:
        arity = _OP_ARITY.get(op)
        if arity is None:
            raise ValueError(f"unknown op {op!r}")
        if len(inputs) != arity:
            raise ValueError(f"{op} takes {arity} inputs, got {len(inputs)}")
        vals = [self.nodes[i].value for i in inputs]
        aux = None
        if op == "cosine_sim":
            value = cosine(vals[0], vals[1])
        elif op == "scale_to_unit_interval":
            value = scale_to_unit(vals[0])
        elif op == "mlp_forward":
            x, W1, b1, W2, b2 = vals
            z = W1 @ x + b1
            value = W2 @ np.maximum(z, 0.0) + b2
            aux = z
        elif op == "min":
            value = vals[0] if vals[0] <= vals[1] else vals[1]
        elif op == "max":
            value = vals[0] if vals[0] >= vals[1] else vals[1]
        elif op == "product":
            value = vals[0] * vals[1]
        elif op == "neg_log":
            value = -math.log(vals[0])
        elif op == "one_minus":
            value = 1.0 - vals[0]
        self.nodes.append(Node(op, tuple(inputs), value, aux=aux))
        return len(self.nodes) - 1

    def fold(self, op: str, ids: list[int]) -> int:
        """Left fold of a binary t-norm over score nodes; empty -> 1.0."""
        if not ids:
            return self.constant(1.0)
        acc = ids[0]
        for nid in ids[1:]:
            acc = self.record(op, acc, nid)
        return acc

    def has_close_tie(self, tol: float = 1e-6) -> bool:
        """True if any min/max node has inputs within tol, any ReLU
        preactivation sits within tol of zero (elementwise max), or an
        encoding (nearly) collapsed; finite differences straddle a kink
        at such points."""
        if self.degenerate_steps:
            return True
        for node in self.nodes:
            if node.op in ("min", "max"):
                a = self.nodes[node.inputs[0]].value
                b = self.nodes[node.inputs[1]].value
                if abs(a - b) < tol:
                    return True
            elif node.op == "mlp_forward":
                if np.any(np.abs(node.aux) < tol):
                    return True
            elif node.op == "cosine_sim":
                u = self.nodes[node.inputs[0]].value
                v = self.nodes[node.inputs[1]].value
                if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
                    return True
        return False

    def backward(self, root: int) -> dict[Slot, np.ndarray]:
        """Reverse accumulation from root; min/max route their gradient to
        the argmin/argmax input, first input on exact ties. Returns
        gradients keyed by slot; untouched parameters are simply absent."""
        adjoint: dict[int, float | np.ndarray] = {root: 1.0}
        grads: dict[Slot, np.ndarray] = {}
        for nid in range(root, -1, -1):
            g = adjoint.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]

            def send(i: int, dg) -> None:
                prev = adjoint.get(i)
                adjoint[i] = dg if prev is None else prev + dg

            if node.op == "leaf":
                acc = grads.get(node.slot)
                g_arr = np.asarray(g, dtype=np.float64)
                grads[node.slot] = g_arr if acc is None else acc + g_arr
            elif node.op == "const":
                pass
            elif node.op == "cosine_sim":
                u = self.nodes[node.inputs[0]].value
                v = self.nodes[node.inputs[1]].value
                nu, nv = np.linalg.norm(u), np.linalg.norm(v)
                c = node.value
                send(node.inputs[0], g * (v / (nu * nv) - c * u / (nu * nu)))
                send(node.inputs[1], g * (u / (nu * nv) - c * v / (nv * nv)))
            elif node.op == "scale_to_unit_interval":
                send(node.inputs[0], 0.5 * g)
            elif node.op == "mlp_forward":
                xi, w1i, b1i, w2i, b2i = node.inputs
                x = self.nodes[xi].value
                W1 = self.nodes[w1i].value
                W2 = self.nodes[w2i].value
                z = node.aux
                a = np.maximum(z, 0.0)
                g = np.asarray(g)
                send(w2i, np.outer(g, a))
                send(b2i, g)
                gz = (W2.T @ g) * (z > 0.0)
                send(w1i, np.outer(gz, x))
                send(b1i, gz)
                send(xi, W1.T @ gz)
            elif node.op in ("min", "max"):
                a = self.nodes[node.inputs[0]].value
                b = self.nodes[node.inputs[1]].value
                if node.op == "min":
                    winner = node.inputs[0] if a <= b else node.inputs[1]
                else:
                    winner = node.inputs[0] if a >= b else node.inputs[1]
                send(winner, g)
            elif node.op == "product":
                a = self.nodes[node.inputs[0]].value
                b = self.nodes[node.inputs[1]].value
                send(node.inputs[0], g * b)
                send(node.inputs[1], g * a)
            elif node.op == "neg_log":
                send(node.inputs[0], -g / self.nodes[node.inputs[0]].value)
            elif node.op == "one_minus":
                send(node.inputs[0], -g)
            else:  # pragma: no cover
                raise AssertionError(node.op)
        return grads

    # -- loss -----------------------------------------------------------

    def clamp(self, nid: int) -> int:
        lo = self.constant(CLAMP_LO)
        hi = self.constant(CLAMP_HI)
        return self.record("min", self.record("max", nid, lo), hi)

    def loss(self, p_correct: Optional[int], p_best_wrong: Optional[int]) -> int:
        """Entailment loss -log p_correct - log(1 - p_best_wrong) with both
        probabilities clamped to [1e-6, 1-1e-6].

        Either side may be None (no proof for it): the corresponding term
        is dropped. Built as -log(p_c * (1 - p_w)) from recorded ops.
        """
        if p_correct is None and p_best_wrong is None:
            raise ValueError("loss needs at least one scored side")
        terms = []
        if p_correct is not None:
            terms.append(self.clamp(p_correct))
        if p_best_wrong is not None:
            terms.append(self.record("one_minus", self.clamp(p_best_wrong)))
        inner = terms[0] if len(terms) == 1 else self.record("product", *terms)
        return self.record("neg_log", inner)


def tnorm(kind: str, a: float, b: float) -> float:
    if kind == "product":
        return a * b
    if kind == "min":
        return a if a <= b else b
    raise ValueError(f"unknown aggregator {kind!r}")


def aggregate(kind: str, scores) -> float:
    out = 1.0
    for s in scores:
        out = tnorm(kind, out, s)
    return out


# -- Adam --------------------------------------------------------------------


@dataclass
class OptimizerState:
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[Slot, np.ndarray] = field(default_factory=dict)
    v: dict[Slot, np.ndarray] = field(default_factory=dict)
    skipped_nonfinite: int = 0


def adam_step(
    theta: ParameterSet, grads: dict[Slot, np.ndarray], state: OptimizerState
) -> None:
    """One Adam update, in place. Only slots present in ``grads`` move
    (sparse update); non-finite gradients skip their slot. The frozen
    pretrained table is never a valid slot."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for slot in sorted(grads):
        g = np.asarray(grads[slot], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            state.skipped_nonfinite += 1
            continue
        param = theta.slot_array(slot)
        m = state.m.get(slot)
        if m is None:
            m = np.zeros_like(param)
            state.m[slot] = m
        v = state.v.get(slot)
        if v is None:
            v = np.zeros_like(param)
            state.v[slot] = v
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        param -= state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
