"""Generators for self-contained verification tasks: random classical
programs (checked against the bottom-up oracle), random soft KBs
(checked against exhaustive enumeration), and a synthetic two-hop
transitivity task that trains end-to-end.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .logic import Atom, Constant, KnowledgeBase, Kind, Rule, Symbol, Variable

# -- random classical programs -----------------------------------------------

_RULE_SHAPES = [
    # (head args, body list) over variable names
    (("X", "Y"), [("X", "Y")]),
    (("X", "Y"), [("Y", "X")]),
    (("X", "Z"), [("X", "Y"), ("Y", "Z")]),
    (("X", "Y"), [("X", "Y"), ("X", "Y")]),
    (("X", "Z"), [("Y", "X"), ("Y", "Z")]),
]


def random_program(
    rng: np.random.Generator,
    n_entities: int = 5,
    n_fact_preds: int = 3,
    n_facts: int = 10,
    n_rules: int = 3,
    n_rule_preds: int = 2,
) -> KnowledgeBase:
    """Random function-free program. Rule predicates draw from both the
    fact-pattern texts and some rule-only texts, so chains of depth > 1
    occur."""
    kb = KnowledgeBase()
    entities = [f"e{i}" for i in range(n_entities)]
    fact_preds = [f"p{i}" for i in range(n_fact_preds)]
    rule_only = [f"r{i}" for i in range(n_rule_preds)]
    for _ in range(int(rng.integers(1, n_facts + 1))):
        pred = kb.symbols.intern(Kind.FACT_PRED, str(rng.choice(fact_preds)))
        args = tuple(
            Constant(kb.symbols.intern(Kind.ENTITY, str(rng.choice(entities))))
            for _ in range(2)
        )
        kb.add_fact(Rule(Atom(pred, args)))
    pred_pool = fact_preds + rule_only
    for _ in range(int(rng.integers(0, n_rules + 1))):
        head_args, body_shape = _RULE_SHAPES[int(rng.integers(len(_RULE_SHAPES)))]
        head_pred = kb.symbols.intern(
            Kind.RULE_GOAL_PRED, str(rng.choice(pred_pool))
        )
        head = Atom(head_pred, tuple(Variable(v) for v in head_args))
        body = []
        for args in body_shape:
            pred = kb.symbols.intern(Kind.RULE_GOAL_PRED, str(rng.choice(pred_pool)))
            body.append(Atom(pred, tuple(Variable(v) for v in args)))
        kb.add_rule(Rule(head, tuple(body)))
    return kb


def all_ground_goals(kb: KnowledgeBase) -> list[Atom]:
    """Every (predicate text, entity, entity) combination as a goal atom
    with the predicate in the query namespace."""
    pred_texts = sorted(
        {s.text for s in kb.fact_predicates()}
        | {s.text for s in kb.rulegoal_predicates()}
    )
    entities = sorted(kb.entities(), key=lambda s: s.id)
    goals = []
    for text in pred_texts:
        pred = kb.symbols.intern(Kind.RULE_GOAL_PRED, text)
        for a in entities:
            for b in entities:
                goals.append(Atom(pred, (Constant(a), Constant(b))))
    return goals


def exact_text_similarity(a: Symbol, b: Symbol) -> float:
    """Classical semantics: symbols are equal iff their text matches."""
    return 1.0 if a.text == b.text else 0.0


def random_pair_similarity(rng: np.random.Generator):
    """A stable random symmetric similarity with sim(x, x) = 1, for
    exercising the soft search without any embeddings."""
    memo: dict[tuple, float] = {}

    def sim(a: Symbol, b: Symbol) -> float:
        if a.kind == b.kind and a.id == b.id:
            return 1.0
        if (a.kind == Kind.ENTITY) != (b.kind == Kind.ENTITY):
            return 0.0
        key = (min(a.id, b.id), max(a.id, b.id))
        val = memo.get(key)
        if val is None:
            val = float(rng.uniform(0.0, 1.0))
            memo[key] = val
        return val

    return sim


# -- synthetic transitivity task ----------------------------------------------

QUERY_PRED = "target"

_PARAPHRASES = [
    "ENT1 feeds directly into ENT2",
    "ENT1 leads straight to ENT2",
    "ENT1 connects onward to ENT2",
    "ENT1 passes its output to ENT2",
    "ENT1 is wired into ENT2",
    "ENT1 flows into ENT2",
    "ENT1 hands over to ENT2",
    "ENT1 runs into ENT2 next",
    "ENT1 continues on to ENT2",
    "ENT1 links forward to ENT2",
    "ENT1 drains into ENT2",
    "ENT1 funnels into ENT2",
]


@dataclass
class TaskFiles:
    """Materialized file contents for one generated task instance."""

    triples_tsv: str
    vectors_txt: str
    train_jsonl: str
    test_jsonl: str
    templates_txt: str
    n_candidates: int


def transitivity_task(
    seed: int = 0,
    n_train: int = 200,
    n_test: int = 50,
    dim: int = 8,
    n_variants: int = 12,
    n_candidates: int = 5,
    noise: float = 0.45,
    template_copies: int = 4,
) -> TaskFiles:
    """Two-hop chains with paraphrase-perturbed pattern vectors.

    Each example is a chain head -> mid -> tail over two facts whose
    patterns are drawn from one paraphrase cluster; the query asks for
    the entity two hops from the head and distractors are tails of other
    chains, so no candidate except the answer is reachable and every
    answer needs the transitivity template.
    """
    if n_variants > len(_PARAPHRASES):
        raise ValueError(f"at most {len(_PARAPHRASES)} pattern variants available")
    rng = np.random.default_rng(seed)
    variants = _PARAPHRASES[:n_variants]

    base = rng.normal(0.0, 1.0, size=dim) / np.sqrt(dim)
    vec_lines = [f"{len(variants)} {dim}"]
    for pattern in variants:
        vec = base + noise * rng.normal(0.0, 1.0, size=dim) / np.sqrt(dim)
        key = base64.b64encode(pattern.encode()).decode()
        vec_lines.append(key + " " + " ".join(repr(float(x)) for x in vec))

    triples = []
    chains: dict[str, list[tuple[str, str, str]]] = {"train": [], "test": []}
    for split, count in (("train", n_train), ("test", n_test)):
        for i in range(count):
            head, mid, tail = (f"{split}_{i}_{role}" for role in ("head", "mid", "tail"))
            chains[split].append((head, mid, tail))
            for subj, obj in ((head, mid), (mid, tail)):
                pattern = variants[int(rng.integers(len(variants)))]
                triples.append(f"{subj}\t{pattern}\t{obj}")

    all_tails = [c[2] for split_chains in chains.values() for c in split_chains]

    def examples(split: str) -> str:
        rows = []
        for head, _, tail in chains[split]:
            others = [t for t in all_tails if t != tail]
            picks = rng.choice(len(others), size=n_candidates - 1, replace=False)
            candidates = [tail] + [others[int(k)] for k in picks]
            order = rng.permutation(n_candidates)
            candidates = [candidates[int(k)] for k in order]
            rows.append(
                json.dumps(
                    {
                        "query_pred": QUERY_PRED,
                        "subject": head,
                        "candidates": candidates,
                        "answer": tail,
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(rows) + "\n"

    train_jsonl = examples("train")
    test_jsonl = examples("test")
    # one placeholder for both hops: the chain relation is a single
    # paraphrase cluster, so the induced rule only needs one predicate
    return TaskFiles(
        triples_tsv="\n".join(triples) + "\n",
        vectors_txt="\n".join(vec_lines) + "\n",
        train_jsonl=train_jsonl,
        test_jsonl=test_jsonl,
        templates_txt=f"$q(X,Z) :- p2(X,Y), p2(Y,Z). #{template_copies}\n",
        n_candidates=n_candidates,
    )
