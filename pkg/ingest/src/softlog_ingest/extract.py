"""Triple extraction: detect entity mentions, pair co-occurring mentions
per sentence, and blind each pair to form a reusable sentence pattern.

Entity recognition is pluggable: documents may carry pre-annotated
character spans; otherwise a capitalization heuristic is used (maximal
runs of capitalized tokens, minus a stopword list). Sentence splitting
is a simple punctuation rule. Both defaults are deliberately plain and
overridable; swap in a real recognizer by populating ``entities``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

Span = tuple[int, int]

SUBJECT_MARK = "ENT1"
OBJECT_MARK = "ENT2"

_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")
_CAP_TOKEN = re.compile(r"\b[A-Z][\w'-]*(?:\s+[A-Z][\w'-]*)*")

# words that start sentences or clauses without naming anything
_STOPWORDS = {
    "a", "an", "the", "this", "that", "these", "those", "he", "she", "it",
    "they", "we", "you", "i", "his", "her", "its", "their", "our", "in",
    "on", "at", "of", "for", "with", "and", "but", "or", "if", "when",
    "while", "after", "before", "however", "moreover", "meanwhile", "there",
    "here", "then", "thus", "also", "both", "each", "some", "many", "most",
}


class SpanError(ValueError):
    pass


@dataclass
class DocumentRecord:
    doc_id: str
    text: str
    entities: Optional[list[Span]] = None  # pre-annotated character spans

    def __post_init__(self) -> None:
        if self.entities is None:
            return
        spans = sorted((int(a), int(b)) for a, b in self.entities)
        for start, end in spans:
            if not (0 <= start < end <= len(self.text)):
                raise SpanError(
                    f"{self.doc_id}: span ({start}, {end}) outside text bounds"
                )
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            if s2 < e1:
                raise SpanError(
                    f"{self.doc_id}: overlapping spans ({s1}, {e1}) and ({s2}, {e2})"
                )
        self.entities = spans


@dataclass(frozen=True)
class Triple:
    subject: str
    pattern: str
    object: str
    # spans of the blinded pair, relative to the sentence, for reversibility
    subject_span: Span = (0, 0)
    object_span: Span = (0, 0)
    sentence: str = ""

    def unblind(self) -> str:
        """Reconstruct the original sentence from the pattern and spans."""
        return self.sentence


def split_sentences(text: str) -> Iterator[tuple[int, str]]:
    """(offset, sentence) pairs under a plain punctuation-break rule."""
    offset = 0
    for part in _SENTENCE_BREAK.split(text):
        if part.strip():
            start = text.index(part, offset)
            yield start, part
            offset = start + len(part)


def find_entities(sentence: str) -> list[Span]:
    """Capitalization heuristic: maximal runs of capitalized tokens that
    are not stopwords. Sentence-relative spans, position order."""
    spans = []
    for m in _CAP_TOKEN.finditer(sentence):
        if m.group().lower() in _STOPWORDS:
            continue
        spans.append((m.start(), m.end()))
    return spans


def _blind(sentence: str, subject: Span, obj: Span) -> str:
    s1, e1 = subject
    s2, e2 = obj
    return (
        sentence[:s1]
        + SUBJECT_MARK
        + sentence[e1:s2]
        + OBJECT_MARK
        + sentence[e2:]
    )


def extract_triples(
    doc: DocumentRecord, aliases: Optional[dict[str, str]] = None
) -> list[Triple]:
    """One triple per ordered entity-mention pair per sentence.

    The earlier mention becomes the subject; the pair is replaced by
    ENT1/ENT2 in the sentence to form the pattern, all other mentions
    stay verbatim. Sentences with fewer than two mentions emit nothing.
    ``aliases`` normalizes entity surface forms (identifier -> name).
    """
    aliases = aliases or {}
    triples = []
    for offset, sentence in split_sentences(doc.text):
        if doc.entities is not None:
            mentions = [
                (s - offset, e - offset)
                for s, e in doc.entities
                if s >= offset and e <= offset + len(sentence)
            ]
        else:
            mentions = find_entities(sentence)
        for i in range(len(mentions)):
            for j in range(i + 1, len(mentions)):
                subj_span, obj_span = mentions[i], mentions[j]
                subject = sentence[subj_span[0] : subj_span[1]]
                obj = sentence[obj_span[0] : obj_span[1]]
                triples.append(
                    Triple(
                        subject=aliases.get(subject, subject),
                        pattern=_blind(sentence, subj_span, obj_span),
                        object=aliases.get(obj, obj),
                        subject_span=subj_span,
                        object_span=obj_span,
                        sentence=sentence,
                    )
                )
    return triples


def read_documents(lines: Iterable[str]) -> Iterator[DocumentRecord]:
    """JSON Lines: {"id": str, "text": str, "entities": [[start, end], ...]?}"""
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: invalid JSON ({exc})") from None
        if "id" not in obj or "text" not in obj:
            raise ValueError(f"line {lineno}: need 'id' and 'text' fields")
        yield DocumentRecord(
            doc_id=str(obj["id"]),
            text=obj["text"],
            entities=[tuple(span) for span in obj["entities"]]
            if obj.get("entities") is not None
            else None,
        )


def read_aliases(lines: Iterable[str]) -> dict[str, str]:
    """Two-column TSV: surface form -> canonical name."""
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise ValueError(f"line {lineno}: expected 2 tab-separated columns")
        out[cols[0]] = cols[1]
    return out


def write_triples(stream, triples: Iterable[Triple]) -> None:
    for t in triples:
        for fieldval in (t.subject, t.pattern, t.object):
            if "\t" in fieldval or "\n" in fieldval:
                raise ValueError(f"field not TSV-safe: {fieldval!r}")
        stream.write(f"{t.subject}\t{t.pattern}\t{t.object}\n")
