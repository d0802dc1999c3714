"""Independent reference implementations used to cross-check the prover.

``ground_consequences`` is a bottom-up fixpoint evaluator over surface
text (classical Datalog semantics, no embeddings, no unification code
shared with the prover). ``enumerate_proofs`` is a plain recursive
enumerator of every proof up to a depth bound that applies only the
static threshold, never the dynamic one, so it serves as the oracle for
pruning soundness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

from .logic import (
    Atom,
    Constant,
    FreshNames,
    KnowledgeBase,
    Rule,
    Variable,
    apply_substitution,
    standardize_apart,
)
from .prover import FAILURE, ProverConfig, SimilarityFn, weak_unify

GroundAtom = tuple[str, str, str]  # (predicate text, subject text, object text)


def ground_consequences(kb: KnowledgeBase, depth: int) -> set[GroundAtom]:
    """All ground atoms derivable with a proof tree of height <= depth,
    by naive bottom-up iteration over surface text.

    Height counts rule applications along any root-to-leaf path; KB
    facts have height 0. Predicates match by text, which is the
    classical reading of a program whose fact and rule namespaces are
    split.
    """
    derived: set[GroundAtom] = {
        (
            f.head.predicate.text,
            f.head.args[0].symbol.text,
            f.head.args[1].symbol.text,
        )
        for f in kb.facts
    }
    rules = [
        (
            (r.head.predicate.text, _term_pattern(r.head.args)),
            [(b.predicate.text, _term_pattern(b.args)) for b in r.body],
        )
        for r in kb.rules
    ]
    for _ in range(depth):
        new = set(derived)
        for head, body in rules:
            for env in _match_body(body, derived, {}):
                new.add(_instantiate(head, env))
        if new == derived:
            break
        derived = new
    return derived


def _term_pattern(args) -> tuple:
    out = []
    for t in args:
        if isinstance(t, Variable):
            out.append(("var", t.name))
        else:
            out.append(("const", t.symbol.text))
    return tuple(out)


def _match_body(body, derived: set[GroundAtom], env: dict) -> Iterator[dict]:
    if not body:
        yield env
        return
    pred, pattern = body[0]
    for fact in derived:
        if fact[0] != pred:
            continue
        env2 = _match_args(pattern, fact[1:], env)
        if env2 is not None:
            yield from _match_body(body[1:], derived, env2)


def _match_args(pattern, values, env: dict) -> Optional[dict]:
    env = dict(env)
    for (kind, name), value in zip(pattern, values):
        if kind == "const":
            if name != value:
                return None
        elif name in env:
            if env[name] != value:
                return None
        else:
            env[name] = value
    return env


def _instantiate(head, env: dict) -> GroundAtom:
    pred, pattern = head
    args = []
    for kind, name in pattern:
        args.append(name if kind == "const" else env[name])
    return (pred, args[0], args[1])


@dataclass
class EnumeratedProof:
    score: float
    clauses: list  # (clause, goal) pairs in application order


def enumerate_proofs(
    goal: Atom,
    kb: KnowledgeBase,
    sim: SimilarityFn,
    cfg: ProverConfig,
) -> list[float]:
    """Scores of every proof of ``goal`` up to cfg.depth that survives
    the static threshold cfg.lam. No dynamic threshold, no candidate
    pre-filtering; shares only the unification primitive with the
    prover so both follow the same float path per proof.
    """
    names = FreshNames()
    scores: list[float] = []

    def solve_goal(g: Atom, budget: int, sub, score: float) -> Iterator[tuple]:
        g = apply_substitution(g, sub)
        for fact in kb.facts:
            res = weak_unify(
                g, fact.head, sub, score, sim, cfg.lam, cfg.aggregator
            )
            if res is not FAILURE:
                yield res
        if budget < 1:
            return
        for rule in kb.rules:
            fresh = standardize_apart(rule, names)
            res = weak_unify(g, fresh.head, sub, score, sim, cfg.lam, cfg.aggregator)
            if res is FAILURE:
                continue
            sub2, score2 = res
            yield from solve_body(list(fresh.body), budget - 1, sub2, score2)

    def solve_body(atoms, budget: int, sub, score: float) -> Iterator[tuple]:
        if not atoms:
            yield sub, score
            return
        if score < cfg.lam:
            return
        for sub1, score1 in solve_goal(atoms[0], budget, sub, score):
            yield from solve_body(atoms[1:], budget, sub1, score1)

    for _, s in solve_goal(goal, cfg.depth, {}, 1.0):
        if s >= cfg.lam:
            scores.append(s)
    return scores


def max_proof_score(
    goal: Atom, kb: KnowledgeBase, sim: SimilarityFn, cfg: ProverConfig
) -> Optional[float]:
    """Maximum over all enumerated proof scores, or None if no proof
    reaches the static threshold. Ties and float paths match the
    prover's because per-proof aggregation order is identical."""
    scores = enumerate_proofs(goal, kb, sim, cfg)
    if not scores:
        return None
    return max(scores)
