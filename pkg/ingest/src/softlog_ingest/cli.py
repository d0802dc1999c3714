"""Command line: documents JSONL in, triple TSV + pattern vectors out."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import resolve_encoder
from .extract import read_aliases, read_documents, extract_triples, write_triples
from .vectors import export_vectors


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="softlog-ingest",
        description="extract entity co-occurrence triples and pattern vectors",
    )
    p.add_argument("--docs", required=True, help="documents (JSON Lines)")
    p.add_argument("--triples", required=True, help="output triple TSV")
    p.add_argument("--vectors", help="output pattern vector file")
    p.add_argument(
        "--encoder", default="hash-256", help="pattern encoder (default hash-256)"
    )
    p.add_argument("--aliases", help="entity alias TSV (surface\\tcanonical)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        aliases = None
        if args.aliases:
            aliases = read_aliases(
                Path(args.aliases).read_text(encoding="utf-8").splitlines()
            )
        doc_lines = Path(args.docs).read_text(encoding="utf-8").splitlines()
        triples = []
        n_docs = 0
        for doc in read_documents(doc_lines):
            triples.extend(extract_triples(doc, aliases))
            n_docs += 1
        with open(args.triples, "w", encoding="utf-8") as fh:
            write_triples(fh, triples)
        print(f"{n_docs} documents -> {len(triples)} triples -> {args.triples}")
        if args.vectors:
            _, encoder = resolve_encoder(args.encoder)
            with open(args.vectors, "w", encoding="utf-8") as fh:
                n = export_vectors(fh, (t.pattern for t in triples), encoder)
            print(f"{n} patterns -> {args.vectors}")
        return 0
    except OSError as exc:
        print(f"error: cannot open {exc.filename}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
