import io

import numpy as np
import pytest

from softlog_ingest.encoders import HashingEncoder, resolve_encoder
from softlog_ingest.vectors import export_vectors


class TestHashingEncoder:
    def test_deterministic(self):
        enc = HashingEncoder(64)
        np.testing.assert_array_equal(enc("ENT1 is in ENT2"), enc("ENT1 is in ENT2"))

    def test_unit_norm(self):
        enc = HashingEncoder(128)
        assert np.linalg.norm(enc("some pattern")) == pytest.approx(1.0)

    def test_similar_strings_closer_than_dissimilar(self):
        enc = HashingEncoder(256)
        a = enc("ENT1 is located in ENT2")
        b = enc("ENT1 is located within ENT2")
        c = enc("completely unrelated words entirely")
        assert np.dot(a, b) > np.dot(a, c)

    def test_resolver(self):
        label, enc = resolve_encoder("hash-32")
        assert label == "hash-32" and enc.dim == 32
        with pytest.raises(ValueError, match="unknown encoder"):
            resolve_encoder("sbert-large")

    def test_resolver_accepts_callable(self):
        fn = lambda s: np.ones(3)
        _, enc = resolve_encoder(fn)
        assert enc is fn


class TestExportVectors:
    def test_header_and_rows(self):
        out = io.StringIO()
        n = export_vectors(out, ["p one", "p two", "p three"], HashingEncoder(16))
        lines = out.getvalue().splitlines()
        assert n == 3
        assert lines[0] == "3 16"
        assert len(lines) == 4

    def test_duplicates_collapsed(self):
        out = io.StringIO()
        n = export_vectors(out, ["same", "same", "other"], HashingEncoder(8))
        assert n == 2
        assert out.getvalue().splitlines()[0] == "2 8"

    def test_empty_pattern_list_rejected(self):
        with pytest.raises(ValueError, match="no patterns"):
            export_vectors(io.StringIO(), [], HashingEncoder(8))
