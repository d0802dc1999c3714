"""Trainable parameters and the encoder stack per symbol namespace.

Entities and rule/goal predicates are encoded as a learned embedding row
passed through a one-hidden-layer ReLU MLP; fact predicates (sentence
patterns) are encoded as a frozen pretrained row passed through their
own trainable MLP. Similarity between two symbols is their cosine
similarity scaled to [0, 1].
"""

from __future__ import annotations

import base64
import binascii
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .logic import Kind, KnowledgeBase, Symbol

ZERO_ROW_EPS = 1e-8


class VectorTableError(ValueError):
    pass


class VectorTable:
    """Fixed-dimension dense vectors keyed by symbol id (or raw text for
    pretrained tables before binding)."""

    def __init__(self, dim: int) -> None:
        if dim <= 0:
            raise VectorTableError("dimension must be positive")
        self.dim = dim
        self.rows: dict = {}

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, key) -> bool:
        return key in self.rows

    def get(self, key) -> np.ndarray:
        return self.rows[key]

    def set(self, key, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise VectorTableError(
                f"row for {key!r} has shape {vec.shape}, expected ({self.dim},)"
            )
        if not np.linalg.norm(vec):
            vec = vec + ZERO_ROW_EPS  # keep rows away from the exact zero vector
        self.rows[key] = vec

    def copy(self) -> "VectorTable":
        out = VectorTable(self.dim)
        out.rows = {k: v.copy() for k, v in self.rows.items()}
        return out


def _encode_key(text: str) -> str:
    return base64.b64encode(text.encode("utf-8")).decode("ascii")


def _decode_key(key: str) -> str:
    try:
        return base64.b64decode(key.encode("ascii"), validate=True).decode("utf-8")
    except (binascii.Error, UnicodeDecodeError) as exc:
        raise VectorTableError(f"malformed base64 key {key!r}") from exc


def load_pretrained(stream: Iterable[str] | TextIO) -> VectorTable:
    """Read a word2vec-style text vector file.

    Header line is ``N d``; each following line is a base64-encoded key
    (the raw pattern string, base64 keeps the format line-oriented)
    followed by d floats. Keys in the returned table are decoded texts.
    """
    lines = iter(stream)
    try:
        header = next(lines)
    except StopIteration:
        raise VectorTableError("empty vector file") from None
    parts = header.split()
    if len(parts) != 2:
        raise VectorTableError(f"malformed header {header.strip()!r}")
    try:
        count, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise VectorTableError(f"malformed header {header.strip()!r}") from None
    table = VectorTable(dim)
    n = 0
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != dim + 1:
            raise VectorTableError(
                f"line {lineno}: expected {dim} values, got {len(fields) - 1}"
            )
        text = _decode_key(fields[0])
        if text in table:
            raise VectorTableError(f"line {lineno}: duplicate key {text!r}")
        table.set(text, np.array([float(x) for x in fields[1:]]))
        n += 1
    if n != count:
        raise VectorTableError(f"header declares {count} rows, file has {n}")
    return table


def write_vector_file(stream: TextIO, table: VectorTable, key_to_text=None) -> None:
    """Write a table in the format read by :func:`load_pretrained`.

    ``key_to_text`` maps table keys to the strings to encode; by default
    keys are assumed to already be strings.
    """
    stream.write(f"{len(table.rows)} {table.dim}\n")
    for key, vec in table.rows.items():
        text = key_to_text(key) if key_to_text else key
        values = " ".join(repr(float(x)) for x in vec)
        stream.write(f"{_encode_key(text)} {values}\n")


@dataclass
class MlpParams:
    """One-hidden-layer ReLU MLP, linear output: W2 @ relu(W1 @ x + b1) + b2."""

    W1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (d, h)
    b2: np.ndarray  # (d,)

    def validate(self) -> None:
        h, d = self.W1.shape
        assert self.b1.shape == (h,)
        assert self.W2.shape == (d, h)
        assert self.b2.shape == (d,)
        for a in (self.W1, self.b1, self.W2, self.b2):
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite MLP parameter")


def mlp_forward(mlp: MlpParams, x: np.ndarray) -> np.ndarray:
    z = mlp.W1 @ x + mlp.b1
    return mlp.W2 @ np.maximum(z, 0.0) + mlp.b2


def he_mlp(d: int, h: int, rng: np.random.Generator) -> MlpParams:
    return MlpParams(
        W1=rng.normal(0.0, math.sqrt(2.0 / d), size=(h, d)),
        b1=np.zeros(h),
        W2=rng.normal(0.0, math.sqrt(2.0 / h), size=(d, h)),
        b2=np.zeros(d),
    )


def identity_mlp(d: int) -> MlpParams:
    """Exact identity map: relu(x) - relu(-x) == x. Used for controlled tests."""
    eye = np.eye(d)
    return MlpParams(
        W1=np.vstack([eye, -eye]),
        b1=np.zeros(2 * d),
        W2=np.hstack([eye, -eye]),
        b2=np.zeros(d),
    )


@dataclass
class InitConfig:
    hidden: int | None = None  # None -> same as embedding dim
    seed: int = 0
    entity_mlp: bool = True  # False removes the entity MLP (ablation)


@dataclass
class ParameterSet:
    """All trainable state. ``pretrained_table`` is frozen; everything
    else is updated by the optimizer. ``entity_mlp`` is None under the
    no-entity-MLP ablation."""

    dim: int
    hidden: int
    entity_table: VectorTable
    entity_mlp: MlpParams | None
    pretrained_table: VectorTable
    fact_pred_mlp: MlpParams
    rulegoal_table: VectorTable
    rulegoal_mlp: MlpParams
    warnings: dict = field(default_factory=dict)

    def warn(self, key: str) -> None:
        self.warnings[key] = self.warnings.get(key, 0) + 1

    def slot_array(self, slot: tuple) -> np.ndarray:
        """Resolve a parameter slot to its mutable ndarray."""
        group, key = slot
        if group == "entity":
            return self.entity_table.rows[key]
        if group == "rulegoal":
            return self.rulegoal_table.rows[key]
        mlp = {
            "entity_mlp": self.entity_mlp,
            "fact_pred_mlp": self.fact_pred_mlp,
            "rulegoal_mlp": self.rulegoal_mlp,
        }[group]
        return getattr(mlp, key)

    def mlp_slots(self, group: str) -> list[tuple]:
        return [(group, f) for f in ("W1", "b1", "W2", "b2")]


class MissingPretrainedError(ValueError):
    def __init__(self, patterns: list[str]) -> None:
        self.patterns = patterns
        listing = "; ".join(repr(p) for p in patterns)
        super().__init__(f"no pretrained vector for pattern(s): {listing}")


def _uniform_row(rng: np.random.Generator, d: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(d)
    return rng.uniform(-bound, bound, size=d)


def init_parameters(
    kb: KnowledgeBase, pretrained: VectorTable, cfg: InitConfig | None = None
) -> ParameterSet:
    """Build a fresh ParameterSet for a knowledge base.

    Entity and rule/goal rows are uniform in (-1/sqrt(d), 1/sqrt(d));
    MLPs are He-initialized with zero biases. Every fact predicate must
    have a row in the pretrained table. Deterministic given cfg.seed.
    """
    cfg = cfg or InitConfig()
    d = pretrained.dim
    h = cfg.hidden if cfg.hidden is not None else d
    missing = [s.text for s in kb.fact_predicates() if s.text not in pretrained]
    if missing:
        raise MissingPretrainedError(missing)
    rng = np.random.default_rng(cfg.seed)

    entity_table = VectorTable(d)
    for sym in kb.entities():
        entity_table.set(sym.id, _uniform_row(rng, d))
    entity_mlp = he_mlp(d, h, rng) if cfg.entity_mlp else None

    bound_pretrained = VectorTable(d)
    for sym in kb.fact_predicates():
        bound_pretrained.set(sym.id, pretrained.get(sym.text).copy())
    fact_pred_mlp = he_mlp(d, h, rng)

    rulegoal_table = VectorTable(d)
    for sym in kb.rulegoal_predicates():
        rulegoal_table.set(sym.id, _uniform_row(rng, d))
    rulegoal_mlp = he_mlp(d, h, rng)

    return ParameterSet(
        dim=d,
        hidden=h,
        entity_table=entity_table,
        entity_mlp=entity_mlp,
        pretrained_table=bound_pretrained,
        fact_pred_mlp=fact_pred_mlp,
        rulegoal_table=rulegoal_table,
        rulegoal_mlp=rulegoal_mlp,
    )


def ensure_symbol_rows(
    theta: ParameterSet, symbols: Iterable[Symbol], rng: np.random.Generator
) -> None:
    """Add uniform-random rows for symbols missing from their table
    (fresh template predicates, query predicates unseen at init)."""
    for sym in symbols:
        if sym.kind == Kind.ENTITY:
            if sym.id not in theta.entity_table:
                theta.entity_table.set(sym.id, _uniform_row(rng, theta.dim))
        elif sym.kind == Kind.RULE_GOAL_PRED:
            if sym.id not in theta.rulegoal_table:
                theta.rulegoal_table.set(sym.id, _uniform_row(rng, theta.dim))


class UnknownSymbolError(KeyError):
    pass


def encode_symbol(sym: Symbol, theta: ParameterSet) -> np.ndarray:
    """Encoder routing by namespace; see module docstring."""
    if sym.kind == Kind.ENTITY:
        try:
            row = theta.entity_table.get(sym.id)
        except KeyError:
            raise UnknownSymbolError(f"entity {sym.text!r} has no embedding row")
        return mlp_forward(theta.entity_mlp, row) if theta.entity_mlp else row
    if sym.kind == Kind.FACT_PRED:
        try:
            row = theta.pretrained_table.get(sym.id)
        except KeyError:
            raise UnknownSymbolError(
                f"fact predicate pattern {sym.text!r} has no pretrained vector"
            )
        return mlp_forward(theta.fact_pred_mlp, row)
    try:
        row = theta.rulegoal_table.get(sym.id)
    except KeyError:
        raise UnknownSymbolError(
            f"rule/goal predicate {sym.text!r} has no embedding row"
        )
    return mlp_forward(theta.rulegoal_mlp, row)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Raw cosine; shared by search-time similarity and tape rescoring so
    both follow the identical float path."""
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return float("nan")
    return float(np.dot(u, v) / (nu * nv))


def scale_to_unit(c: float) -> float:
    return 0.5 * (1.0 + c)


def _is_entity(sym: Symbol) -> bool:
    return sym.kind == Kind.ENTITY


def similarity(s1: Symbol, s2: Symbol, theta: ParameterSet) -> float:
    """Scaled cosine similarity of two symbols in [0, 1].

    Identical symbols short-circuit to exactly 1.0 (and contribute no
    gradient downstream). Entities never unify with predicates (0.0).
    A zero-norm encoded vector yields 0.5 and bumps a warning counter.
    """
    if s1 is s2 or (s1.kind == s2.kind and s1.id == s2.id):
        return 1.0
    if _is_entity(s1) != _is_entity(s2):
        return 0.0
    c = cosine(encode_symbol(s1, theta), encode_symbol(s2, theta))
    if math.isnan(c):
        theta.warn("zero_norm_encoding")
        return 0.5
    return scale_to_unit(c)


def _mlp_to_json(mlp: MlpParams | None):
    if mlp is None:
        return None
    return {k: getattr(mlp, k).tolist() for k in ("W1", "b1", "W2", "b2")}


def _mlp_from_json(obj) -> MlpParams | None:
    if obj is None:
        return None
    return MlpParams(**{k: np.array(v, dtype=np.float64) for k, v in obj.items()})


def save_parameters(theta: ParameterSet, kb: KnowledgeBase, outdir) -> None:
    """Write the trainable state: one vector file per table (keys are
    symbol texts) plus a JSON sidecar for the MLPs and dimensions."""
    import json
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    texts = {
        kind: {s.id: s.text for s in kb.symbols.symbols(kind)} for kind in Kind
    }
    tables = [
        ("params.entities.vec", theta.entity_table, texts[Kind.ENTITY]),
        ("params.rulegoal.vec", theta.rulegoal_table, texts[Kind.RULE_GOAL_PRED]),
        ("params.pretrained.vec", theta.pretrained_table, texts[Kind.FACT_PRED]),
    ]
    for name, table, mapping in tables:
        with open(outdir / name, "w", encoding="utf-8") as fh:
            write_vector_file(fh, table, key_to_text=lambda k, m=mapping: m[k])
    sidecar = {
        "dim": theta.dim,
        "hidden": theta.hidden,
        "entity_mlp": _mlp_to_json(theta.entity_mlp),
        "fact_pred_mlp": _mlp_to_json(theta.fact_pred_mlp),
        "rulegoal_mlp": _mlp_to_json(theta.rulegoal_mlp),
        "warnings": theta.warnings,
    }
    with open(outdir / "params.mlps.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_parameters(kb: KnowledgeBase, indir) -> ParameterSet:
    """Rebind saved tables to the KB's symbols by text. Symbols present
    in the KB but absent from the files are reported exhaustively."""
    import json
    from pathlib import Path

    indir = Path(indir)
    with open(indir / "params.mlps.json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    dim = sidecar["dim"]

    def bind(name: str, kind: Kind) -> VectorTable:
        with open(indir / name, encoding="utf-8") as fh:
            by_text = load_pretrained(fh)
        if by_text.dim != dim:
            raise VectorTableError(f"{name}: dim {by_text.dim} != sidecar dim {dim}")
        table = VectorTable(dim)
        missing = []
        for sym in kb.symbols.symbols(kind):
            if sym.text in by_text:
                table.set(sym.id, by_text.get(sym.text))
            else:
                missing.append(sym.text)
        if missing:
            raise VectorTableError(
                f"{name}: no saved vector for: " + "; ".join(map(repr, missing))
            )
        return table

    return ParameterSet(
        dim=dim,
        hidden=sidecar["hidden"],
        entity_table=bind("params.entities.vec", Kind.ENTITY),
        entity_mlp=_mlp_from_json(sidecar["entity_mlp"]),
        pretrained_table=bind("params.pretrained.vec", Kind.FACT_PRED),
        fact_pred_mlp=_mlp_from_json(sidecar["fact_pred_mlp"]),
        rulegoal_table=bind("params.rulegoal.vec", Kind.RULE_GOAL_PRED),
        rulegoal_mlp=_mlp_from_json(sidecar["rulegoal_mlp"]),
        warnings=dict(sidecar.get("warnings", {})),
    )


class EncoderCache:
    """Per-parameter-snapshot memo of encodings and pairwise similarities.

    Also exposes vectorized encodings of fact columns for the prover's
    fact pre-filter. Invalidate (drop) after every optimizer step.
    """

    def __init__(self, theta: ParameterSet) -> None:
        self.theta = theta
        self._enc: dict[tuple, np.ndarray] = {}
        self._sim: dict[tuple, float] = {}
        self._norm: dict[tuple, float] = {}
        self._fact_columns: dict[int, tuple] = {}
        self._col_sims: dict[tuple, np.ndarray] = {}

    def encode(self, sym: Symbol) -> np.ndarray:
        key = (sym.kind, sym.id)
        vec = self._enc.get(key)
        if vec is None:
            vec = encode_symbol(sym, self.theta)
            self._enc[key] = vec
            self._norm[key] = float(np.linalg.norm(vec))
        return vec

    def norm(self, sym: Symbol) -> float:
        self.encode(sym)
        return self._norm[(sym.kind, sym.id)]

    def similarity(self, s1: Symbol, s2: Symbol) -> float:
        if s1 is s2 or (s1.kind == s2.kind and s1.id == s2.id):
            return 1.0
        a, b = (s1.kind.value, s1.id), (s2.kind.value, s2.id)
        key = (a, b) if a <= b else (b, a)
        val = self._sim.get(key)
        if val is None:
            val = similarity(s1, s2, self.theta)
            self._sim[key] = val
        return val

    def fact_columns(self, kb_id: int, facts) -> tuple:
        """Per fact column (predicate, subject, object): symbol id array,
        entity flag, stacked encodings and their norms. Cached per KB."""
        cached = self._fact_columns.get(kb_id)
        if cached is not None and cached[0] is facts:
            return cached[1]
        preds = [f.head.predicate for f in facts]
        subjs = [f.head.args[0].symbol for f in facts]
        objs = [f.head.args[1].symbol for f in facts]
        enc = self.encode
        cols = []
        for syms, is_entity in ((preds, False), (subjs, True), (objs, True)):
            ids = np.fromiter((s.id for s in syms), dtype=np.int64, count=len(syms))
            if syms:
                M = np.stack([enc(s) for s in syms])
            else:
                M = np.zeros((0, self.theta.dim))
            norms = np.linalg.norm(M, axis=1)
            cols.append((ids, is_entity, M, norms))
        result = tuple(cols)
        self._fact_columns[kb_id] = (facts, result)
        return result

    def column_sims(self, kb_id: int, facts, col: int, part) -> np.ndarray:
        """Similarities of one symbol against a whole fact column,
        memoized; entity/predicate sort mismatches are all-zero and
        exact symbol matches are forced to 1.0."""
        key = (kb_id, col, part.kind.value, part.id)
        sims = self._col_sims.get(key)
        if sims is not None:
            return sims
        ids, col_is_entity, M, norms = self.fact_columns(kb_id, facts)[col]
        part_is_entity = part.kind == Kind.ENTITY
        if part_is_entity != col_is_entity:
            sims = np.zeros(len(ids))
        else:
            u = self.encode(part)
            nu = self.norm(part)
            if nu == 0.0:
                sims = np.full(len(ids), 0.5)
            else:
                with np.errstate(invalid="ignore"):
                    cos = (M @ u) / (norms * nu)
                sims = 0.5 * (1.0 + cos)
                sims = np.where(np.isnan(sims), 0.5, sims)
            sims = np.where(ids == part.id, 1.0, sims)
        self._col_sims[key] = sims
        return sims
