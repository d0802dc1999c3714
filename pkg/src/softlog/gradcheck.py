"""Finite-difference verification of tape gradients.

Builds random proof-rescoring tapes from small random knowledge bases
and compares reverse-mode gradients against central finite differences
of the rebuilt forward value. Configurations whose tape contains a
min/max tie (or a ReLU preactivation) within 1e-6 of the kink are
resampled, since finite differences are meaningless there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import Slot, Tape
from .embeddings import (
    InitConfig,
    ParameterSet,
    VectorTable,
    init_parameters,
)
from .logic import Atom, Constant, KnowledgeBase, Kind, Rule, Variable
from .prover import ProverConfig, prove, rescore_proof

FD_STEP = 1e-5
TIE_TOL = 1e-6


def _random_setup(
    rng: np.random.Generator, dim: int, aggregator: str
) -> tuple[KnowledgeBase, ParameterSet, ProverConfig, list[Atom]]:
    kb = KnowledgeBase()
    entities = [kb.symbols.intern(Kind.ENTITY, f"e{i}") for i in range(4)]
    patterns = [f"pattern {i} ENT1 to ENT2" for i in range(3)]
    pretrained = VectorTable(dim)
    for p in patterns:
        pretrained.set(p, rng.normal(0.0, 1.0, size=dim))
    fact_preds = [kb.symbols.intern(Kind.FACT_PRED, p) for p in patterns]
    n_facts = int(rng.integers(3, 6))
    for _ in range(n_facts):
        pred = fact_preds[int(rng.integers(len(fact_preds)))]
        args = tuple(
            Constant(entities[int(rng.integers(len(entities)))]) for _ in range(2)
        )
        kb.add_fact(Rule(Atom(pred, args)))
    q = kb.symbols.intern(Kind.RULE_GOAL_PRED, "query")
    link = kb.symbols.intern(Kind.RULE_GOAL_PRED, "link")
    hop = kb.symbols.intern(Kind.RULE_GOAL_PRED, "hop")
    x, y, z = Variable("X"), Variable("Y"), Variable("Z")
    kb.add_rule(Rule(Atom(q, (x, y)), (Atom(link, (x, y)),)))
    kb.add_rule(Rule(Atom(q, (x, z)), (Atom(link, (x, y)), Atom(hop, (y, z)))))
    theta = init_parameters(
        kb, pretrained, InitConfig(seed=int(rng.integers(2**31)))
    )
    cfg = ProverConfig(lam=0.05, depth=2, aggregator=aggregator)
    goals = [
        Atom(q, (Constant(entities[int(rng.integers(len(entities)))]),
                 Constant(entities[int(rng.integers(len(entities)))])))
        for _ in range(4)
    ]
    return kb, theta, cfg, goals


def _tape_slots(tape: Tape) -> list[Slot]:
    return sorted(tape._leaf_ids)


def finite_difference(
    build: Callable[[], tuple[Tape, int]],
    theta: ParameterSet,
    slots: list[Slot],
    step: float = FD_STEP,
) -> dict[Slot, np.ndarray]:
    """Central differences of the rebuilt forward value with respect to
    every coordinate of every slot."""
    grads: dict[Slot, np.ndarray] = {}
    for slot in slots:
        param = theta.slot_array(slot)
        grad = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + step
            tape_hi, root_hi = build()
            hi = tape_hi.value(root_hi)
            param[idx] = orig - step
            tape_lo, root_lo = build()
            lo = tape_lo.value(root_lo)
            param[idx] = orig
            grad[idx] = (hi - lo) / (2.0 * step)
            it.iternext()
        grads[slot] = grad
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@dataclass
class GradCheckReport:
    tapes_checked: int
    max_rel_error: float
    resampled_ties: int


def run_gradcheck(
    seed: int = 0,
    n_tapes: int = 100,
    dim: int = 5,
    include_loss: bool = True,
) -> GradCheckReport:
    """Check ``n_tapes`` random proof-rescoring tapes (alternating
    aggregators; half of them wrapped in the entailment loss)."""
    rng = np.random.default_rng(seed)
    checked = 0
    resampled = 0
    max_err = 0.0
    while checked < n_tapes:
        aggregator = "product" if checked % 2 == 0 else "min"
        kb, theta, cfg, goals = _random_setup(rng, dim, aggregator)
        proofs = []
        for goal in goals:
            result = prove(goal, kb, theta, cfg)
            if result is not None:
                proofs.append(result.proof)
            if len(proofs) == 2:
                break
        if not proofs:
            continue
        with_loss = include_loss and checked % 2 == 1 and len(proofs) >= 1

        def build() -> tuple[Tape, int]:
            tape = Tape()
            roots = [rescore_proof(p, theta, tape) for p in proofs]
            if with_loss:
                wrong = roots[1] if len(roots) > 1 else None
                return tape, tape.loss(roots[0], wrong)
            return tape, tape.fold(aggregator, roots)

        tape, root = build()
        if tape.has_close_tie(TIE_TOL):
            resampled += 1
            continue
        analytic = tape.backward(root)
        slots = _tape_slots(tape)
        numeric = finite_difference(build, theta, slots)
        for slot in slots:
            err = relative_error(analytic.get(slot, 0.0 * numeric[slot]), numeric[slot])
            max_err = max(max_err, err)
        checked += 1
    return GradCheckReport(checked, max_err, resampled)
