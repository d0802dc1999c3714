"""Corpus ingestion: entity co-occurrence triples with blinded-sentence
patterns, plus pattern vector export in the prover's file formats."""

from .extract import (
    DocumentRecord,
    Triple,
    extract_triples,
    find_entities,
    split_sentences,
)
from .encoders import HashingEncoder, resolve_encoder
from .vectors import export_vectors

__version__ = "0.1.0"
