"""Pattern vector export in the prover's word2vec-style text format:
header ``N d``, then one line per pattern with a base64-encoded key
(keeping the format line-oriented despite spaces in patterns)."""

from __future__ import annotations

import base64
from typing import Iterable, TextIO

import numpy as np


def export_vectors(stream: TextIO, patterns: Iterable[str], encoder) -> int:
    """Encode each distinct pattern and write the vector file. Returns
    the number of rows written. Duplicates are collapsed; an empty
    pattern list is an error (the header would be degenerate)."""
    unique = list(dict.fromkeys(patterns))
    if not unique:
        raise ValueError("no patterns to export")
    rows = [(p, np.asarray(encoder(p), dtype=np.float64)) for p in unique]
    dim = rows[0][1].shape[0]
    for p, v in rows:
        if v.shape != (dim,):
            raise ValueError(f"encoder returned shape {v.shape} for {p!r}")
    stream.write(f"{len(rows)} {dim}\n")
    for pattern, vec in rows:
        key = base64.b64encode(pattern.encode("utf-8")).decode("ascii")
        stream.write(key + " " + " ".join(repr(float(x)) for x in vec) + "\n")
    return len(rows)
