"""Weak unification and depth-limited backward chaining.

Symbol equality is replaced by a similarity score in [0, 1]; a proof's
score is the t-norm aggregation (product or min) of all unification
scores in its tree. Search keeps a running threshold that starts at the
configured lambda and is raised to the best complete-proof score found
so far, which prunes branches without changing the returned maximum
(scores only shrink under both aggregators).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .autodiff import Tape, aggregate, tnorm
from .embeddings import EncoderCache, ParameterSet
from .logic import (
    Atom,
    Constant,
    FreshNames,
    KnowledgeBase,
    Kind,
    Rule,
    Substitution,
    Symbol,
    Term,
    Variable,
    apply_substitution,
    format_atom,
    format_rule,
    format_term,
    resolve,
    standardize_apart,
)

SimilarityFn = Callable[[Symbol, Symbol], float]

# sentinel distinct from any (substitution, score) pair
FAILURE = (None, 0.0)


@dataclass
class ProverConfig:
    lam: float = 0.5
    depth: int = 3
    aggregator: str = "product"  # or "min"
    max_proofs: Optional[int] = None
    # test hook: replaces the embedding similarity wholesale
    similarity_fn: Optional[SimilarityFn] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.aggregator not in ("product", "min"):
            raise ValueError("aggregator must be 'product' or 'min'")


@dataclass(frozen=True)
class UnificationStep:
    left: Symbol
    right: Symbol
    score: float
    exact: bool

    def __post_init__(self) -> None:
        assert not self.exact or self.score == 1.0


@dataclass
class ProofNode:
    """One resolved goal: the clause that proved it, the head-unification
    steps, and child nodes for the clause's body atoms."""

    goal: Atom
    clause: Rule
    steps: tuple[UnificationStep, ...]
    children: tuple["ProofNode", ...]

    def is_fact_leaf(self) -> bool:
        return not self.clause.body


@dataclass
class Proof:
    goal: Atom
    root: ProofNode
    substitution: Substitution
    score: float
    aggregator: str

    def all_steps(self) -> Iterator[UnificationStep]:
        """Pre-order traversal; matches the order scores were folded in
        during search, so re-aggregation reproduces the same float."""

        def walk(node: ProofNode) -> Iterator[UnificationStep]:
            yield from node.steps
            for child in node.children:
                yield from walk(child)

        yield from walk(self.root)

    def depth(self) -> int:
        """Rule applications along the deepest path (facts are free)."""

        def walk(node: ProofNode) -> int:
            if node.is_fact_leaf():
                return 0
            return 1 + max((walk(c) for c in node.children), default=0)

        return walk(self.root)


@dataclass
class ProveResult:
    score: float
    proof: Proof
    proofs_found: int


def weak_unify(
    x,
    y,
    sub: Optional[Substitution],
    score: float,
    sim: SimilarityFn,
    lam: float,
    aggregator: str,
    steps: Optional[list[UnificationStep]] = None,
):
    """Unify two terms/atoms/argument-lists under similarity ``sim``.

    Returns ``(substitution, score)`` on success, extending ``sub`` and
    aggregating per-symbol similarities into ``score``; returns
    ``FAILURE`` (never raises) when the structures cannot unify or the
    running score falls below ``lam``. ``steps`` collects the symbol
    comparisons made, in application order.
    """
    if sub is None:
        return FAILURE
    if score < lam:
        return FAILURE
    if x == y:
        return sub, score
    if isinstance(x, Variable):
        return _unify_var(x, y, sub, score, sim, lam, aggregator, steps)
    if isinstance(y, Variable):
        return _unify_var(y, x, sub, score, sim, lam, aggregator, steps)
    if isinstance(x, Constant) and isinstance(y, Constant):
        return _unify_symbols(
            x.symbol, y.symbol, sub, score, sim, lam, aggregator, steps
        )
    if isinstance(x, Atom) and isinstance(y, Atom):
        res = _unify_symbols(
            x.predicate, y.predicate, sub, score, sim, lam, aggregator, steps
        )
        if res is FAILURE:
            return FAILURE
        sub2, score2 = res
        return weak_unify(
            list(x.args), list(y.args), sub2, score2, sim, lam, aggregator, steps
        )
    if isinstance(x, list) and isinstance(y, list):
        if not x and not y:
            return sub, score
        if not x or not y:
            return FAILURE
        res = weak_unify(x[0], y[0], sub, score, sim, lam, aggregator, steps)
        if res is FAILURE:
            return FAILURE
        sub2, score2 = res
        return weak_unify(x[1:], y[1:], sub2, score2, sim, lam, aggregator, steps)
    return FAILURE


def _unify_symbols(a: Symbol, b: Symbol, sub, score, sim, lam, aggregator, steps):
    if a is b or (a.kind == b.kind and a.id == b.id):
        if steps is not None:
            steps.append(UnificationStep(a, b, 1.0, exact=True))
        return sub, score  # t-norm with 1.0 is the identity
    s = sim(a, b)
    if s < lam:
        return FAILURE
    if steps is not None:
        steps.append(UnificationStep(a, b, s, exact=False))
    return sub, tnorm(aggregator, score, s)


def _unify_var(v: Variable, o, sub, score, sim, lam, aggregator, steps):
    if v in sub:
        return weak_unify(sub[v], o, sub, score, sim, lam, aggregator, steps)
    if isinstance(o, Variable) and o in sub:
        return weak_unify(v, sub[o], sub, score, sim, lam, aggregator, steps)
    return {**sub, v: o}, score


def make_similarity(
    theta: Optional[ParameterSet],
    cfg: ProverConfig,
    cache: Optional[EncoderCache] = None,
) -> SimilarityFn:
    if cfg.similarity_fn is not None:
        return cfg.similarity_fn
    if theta is None:
        raise ValueError("prove needs parameters or an injected similarity_fn")
    cache = cache or EncoderCache(theta)
    return cache.similarity


class _Search:
    """One depth-first proof search for a single goal.

    ``lam`` is the dynamic threshold: it starts at the configured value
    and is raised to every complete proof score found, globally for the
    remainder of this search.
    """

    def __init__(
        self,
        kb: KnowledgeBase,
        cfg: ProverConfig,
        sim: SimilarityFn,
        cache: Optional[EncoderCache],
    ) -> None:
        self.kb = kb
        self.cfg = cfg
        self.sim = sim
        self.cache = cache
        self.lam = cfg.lam
        self.names = FreshNames()
        self.found = 0
        self.exhausted = False

    def _fact_candidates(self, goal: Atom, score: float) -> Iterator[int]:
        """Indices of facts that can possibly unify with ``goal`` at the
        current threshold, in KB order.

        With an encoder cache this is a vectorized conservative
        pre-filter (a small margin keeps borderline candidates); the
        authoritative score is always recomputed by the scalar
        weak-unify path, so which proofs are found and their float
        values are unchanged.
        """
        facts = self.kb.facts
        if self.cache is None or not facts:
            return range(len(facts))
        kb_id = id(self.kb)
        margin = 1e-9
        cutoff = self.lam - margin
        bound = None
        parts = (goal.predicate, *(
            t.symbol if isinstance(t, Constant) else None for t in goal.args
        ))
        for col, part_sym in enumerate(parts):
            if part_sym is None:
                continue  # unbound variable: unifies freely
            sims = self.cache.column_sims(kb_id, facts, col, part_sym)
            ok = np.where(sims >= cutoff, sims, 0.0)
            if bound is None:
                bound = ok
            elif self.cfg.aggregator == "product":
                bound = bound * ok
            else:
                bound = np.minimum(bound, ok)
        if bound is None:
            return range(len(facts))
        idx = np.nonzero(tnorm_bound(self.cfg.aggregator, score, bound) >= cutoff)[0]
        return idx.tolist()

    def prove_goal(
        self, goal: Atom, budget: int, sub: Substitution, score: float
    ) -> Iterator[tuple[Substitution, float, ProofNode]]:
        if self.exhausted:
            return
        g = apply_substitution(goal, sub)
        for i in self._fact_candidates(g, score):
            if self.exhausted:
                return
            fact = self.kb.facts[i]
            steps: list[UnificationStep] = []
            res = weak_unify(
                g, fact.head, sub, score, self.sim, self.lam, self.cfg.aggregator, steps
            )
            if res is FAILURE:
                continue
            sub2, score2 = res
            yield sub2, score2, ProofNode(g, fact, tuple(steps), ())
        if budget < 1:
            return
        for rule in self.kb.rules:
            if self.exhausted:
                return
            fresh = standardize_apart(rule, self.names)
            steps = []
            res = weak_unify(
                g, fresh.head, sub, score, self.sim, self.lam, self.cfg.aggregator, steps
            )
            if res is FAILURE:
                continue
            sub2, score2 = res
            for sub3, score3, children in self.prove_body(
                list(fresh.body), budget - 1, sub2, score2
            ):
                yield sub3, score3, ProofNode(g, rule, tuple(steps), children)

    def prove_body(
        self, atoms: list[Atom], budget: int, sub: Substitution, score: float
    ) -> Iterator[tuple[Substitution, float, tuple[ProofNode, ...]]]:
        if not atoms:
            yield sub, score, ()
            return
        if score < self.lam:
            return
        for sub1, score1, node in self.prove_goal(atoms[0], budget, sub, score):
            for sub2, score2, rest in self.prove_body(atoms[1:], budget, sub1, score1):
                yield sub2, score2, (node, *rest)


def tnorm_bound(kind: str, score: float, arr: np.ndarray) -> np.ndarray:
    if kind == "product":
        return score * arr
    return np.minimum(score, arr)


def prove(
    goal: Atom,
    kb: KnowledgeBase,
    theta: Optional[ParameterSet],
    cfg: ProverConfig,
    cache: Optional[EncoderCache] = None,
) -> Optional[ProveResult]:
    """Find the maximum-score proof of ``goal`` up to the configured
    depth, or None if no proof reaches the configured lambda.

    Facts are tried before rules, each in KB order; depth counts rule
    applications along a path. Ties keep the first proof found.
    """
    if cfg.similarity_fn is None and theta is not None and cache is None:
        cache = EncoderCache(theta)
    sim = make_similarity(theta, cfg, cache)
    search = _Search(kb, cfg, sim, cache if cfg.similarity_fn is None else None)
    best: Optional[Proof] = None
    for sub, score, node in search.prove_goal(goal, cfg.depth, {}, 1.0):
        if score < search.lam:
            continue
        search.found += 1
        if best is None or score > best.score:
            best = Proof(goal, node, sub, score, cfg.aggregator)
            search.lam = max(search.lam, score)
        if cfg.max_proofs is not None and search.found >= cfg.max_proofs:
            search.exhausted = True
            break
    if best is None:
        return None
    return ProveResult(best.score, best, search.found)


# -- rescoring ----------------------------------------------------------------


def _encode_on_tape(tape: Tape, sym: Symbol, theta: ParameterSet) -> int:
    """Record the encoder computation for a symbol; returns the node id
    of its encoding. Pretrained rows enter as constants (frozen)."""
    if sym.kind == Kind.ENTITY:
        row = tape.leaf(("entity", sym.id), theta.entity_table.get(sym.id))
        if theta.entity_mlp is None:
            return row
        return _mlp_on_tape(tape, "entity_mlp", theta.entity_mlp, row)
    if sym.kind == Kind.FACT_PRED:
        row = tape.constant(theta.pretrained_table.get(sym.id))
        return _mlp_on_tape(tape, "fact_pred_mlp", theta.fact_pred_mlp, row)
    row = tape.leaf(("rulegoal", sym.id), theta.rulegoal_table.get(sym.id))
    return _mlp_on_tape(tape, "rulegoal_mlp", theta.rulegoal_mlp, row)


def _mlp_on_tape(tape: Tape, name: str, mlp, x: int) -> int:
    w1 = tape.leaf((name, "W1"), mlp.W1)
    b1 = tape.leaf((name, "b1"), mlp.b1)
    w2 = tape.leaf((name, "W2"), mlp.W2)
    b2 = tape.leaf((name, "b2"), mlp.b2)
    return tape.record("mlp_forward", x, w1, b1, w2, b2)


def rescore_proof(proof: Proof, theta: ParameterSet, tape: Tape) -> int:
    """Replay a found proof's unification steps as tape operations.

    Exact-match steps contribute a constant 1.0 to the t-norm (the fold
    identity) and are skipped, so they carry no gradient; soft steps
    recompute their similarity from the current parameters through the
    encoders. Returns the root node id, whose value reproduces the
    search-time score.
    """
    enc_cache: dict[tuple, int] = {}

    def encode(sym: Symbol) -> int:
        key = (sym.kind, sym.id)
        nid = enc_cache.get(key)
        if nid is None:
            nid = _encode_on_tape(tape, sym, theta)
            enc_cache[key] = nid
        return nid

    sim_ids = []
    for step in proof.all_steps():
        if step.exact:
            continue
        left, right = encode(step.left), encode(step.right)
        if (
            np.linalg.norm(tape.value(left)) == 0.0
            or np.linalg.norm(tape.value(right)) == 0.0
        ):
            # search-time similarity fell back to 0.5 for a collapsed
            # encoding; mirror it as a constant (no gradient there)
            tape.degenerate_steps += 1
            sim_ids.append(tape.constant(0.5))
            continue
        c = tape.record("cosine_sim", left, right)
        sim_ids.append(tape.record("scale_to_unit_interval", c))
    return tape.fold(proof.aggregator, sim_ids)


# -- explanation --------------------------------------------------------------


def explain(proof: Proof) -> str:
    """Human-readable proof tree with per-step scores. Goals are shown
    with the final substitution applied."""
    sub = proof.substitution
    lines = [
        f"goal: {format_atom(apply_substitution(proof.goal, sub))}",
        f"score: {proof.score:.6g} ({proof.aggregator} of "
        f"{sum(1 for _ in proof.all_steps())} unification steps)",
    ]

    def walk(node: ProofNode, indent: int) -> None:
        pad = "  " * indent
        kind = "fact" if node.is_fact_leaf() else "rule"
        lines.append(f"{pad}{format_atom(apply_substitution(node.goal, sub))}")
        lines.append(f"{pad}  via {kind}: {format_rule(node.clause)}")
        for st in node.steps:
            tag = "exact" if st.exact else f"{st.score:.4f}"
            lines.append(f"{pad}    {st.left.text} ~ {st.right.text}  [{tag}]")
        for child in node.children:
            walk(child, indent + 1)

    walk(proof.root, 0)
    return "\n".join(lines)


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def to_dot(proof: Proof) -> str:
    """GraphViz digraph of the proof tree."""
    lines = ["digraph proof {", "  node [shape=box];"]
    counter = itertools.count()

    def walk(node: ProofNode) -> str:
        nid = f"n{next(counter)}"
        kind = "fact" if node.is_fact_leaf() else "rule"
        score = aggregate(proof.aggregator, (s.score for s in node.steps))
        label = "\\n".join(
            _dot_escape(part)
            for part in (
                format_atom(apply_substitution(node.goal, proof.substitution)),
                f"{kind}: {format_rule(node.clause)}",
                f"step score {score:.4f}",
            )
        )
        lines.append(f'  {nid} [label="{label}"];')
        for child in node.children:
            cid = walk(child)
            lines.append(f"  {nid} -> {cid};")
        return nid

    walk(proof.root)
    lines.append("}")
    return "\n".join(lines)
