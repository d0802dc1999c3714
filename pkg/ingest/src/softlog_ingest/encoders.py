"""Sentence encoders for pattern vector export.

The default is a deterministic character-n-gram feature-hashing encoder:
no model download, stable across runs and machines, and similar strings
land on nearby vectors, which is all the downstream prover needs from a
frozen sentence representation. Any callable ``str -> vector`` can be
plugged in instead (e.g. a locally installed sentence-embedding model).
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

_NAME = re.compile(r"hash-(\d+)$")


@dataclass
class HashingEncoder:
    dim: int
    ngram_lo: int = 3
    ngram_hi: int = 5

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        padded = f" {text.lower()} "
        for n in range(self.ngram_lo, self.ngram_hi + 1):
            for i in range(max(0, len(padded) - n + 1)):
                gram = padded[i : i + n]
                digest = hashlib.md5(gram.encode("utf-8")).digest()
                slot = int.from_bytes(digest[:4], "little") % self.dim
                sign = 1.0 if digest[4] & 1 else -1.0
                vec[slot] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm else vec


def resolve_encoder(name_or_fn) -> tuple[str, object]:
    """Accepts "hash-<dim>" or a callable; returns (label, encoder)."""
    if callable(name_or_fn):
        return getattr(name_or_fn, "__name__", "custom"), name_or_fn
    m = _NAME.match(name_or_fn)
    if m:
        return name_or_fn, HashingEncoder(int(m.group(1)))
    raise ValueError(
        f"unknown encoder {name_or_fn!r}; use 'hash-<dim>' or pass a callable"
    )
