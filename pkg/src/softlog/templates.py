"""Rule templates: rule skeletons over placeholder predicates that are
instantiated with fresh, randomly-initialized predicate symbols and
learned from data.

Template file DSL reuses the Datalog grammar with two extensions:
``$q`` names the pinned query predicate, and a trailing ``#n`` sets the
number of copies to instantiate, e.g.::

    $q(X,Y) :- p2(X,Y). #2
    p1(X,Z) :- p2(X,Y), p3(Y,Z). #2
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .embeddings import ParameterSet, ensure_symbol_rows
from .logic import (
    Atom,
    KnowledgeBase,
    Kind,
    ParseError,
    Rule,
    Symbol,
    Variable,
)

PINNED = "$q"


@dataclass(frozen=True)
class TemplateAtom:
    predicate: str  # placeholder name, or PINNED for the query predicate
    args: tuple[str, ...]  # variable names


@dataclass(frozen=True)
class RuleTemplate:
    head: TemplateAtom
    body: tuple[TemplateAtom, ...]
    multiplicity: int = 1

    def __post_init__(self) -> None:
        if self.multiplicity < 1:
            raise ValueError("multiplicity must be >= 1")
        head_vars = set(self.head.args)
        body_vars = {v for a in self.body for v in a.args}
        if not head_vars <= body_vars:
            raise ValueError("template head variables must appear in the body")

    def placeholders(self) -> list[str]:
        """Distinct placeholder names in first-occurrence order, pinned
        query excluded."""
        seen: list[str] = []
        for atom in (self.head, *self.body):
            if atom.predicate != PINNED and atom.predicate not in seen:
                seen.append(atom.predicate)
        return seen


def default_templates(copies: int = 2) -> list[RuleTemplate]:
    """The standard template set: ``copies`` repetitions of each of
    q(X,Y) <= p2(X,Y);  p1(X,Y) <= p2(Y,X);  p1(X,Z) <= p2(X,Y) and p3(Y,Z).
    """
    forms = [
        RuleTemplate(
            TemplateAtom(PINNED, ("X", "Y")), (TemplateAtom("p2", ("X", "Y")),)
        ),
        RuleTemplate(
            TemplateAtom("p1", ("X", "Y")), (TemplateAtom("p2", ("Y", "X")),)
        ),
        RuleTemplate(
            TemplateAtom("p1", ("X", "Z")),
            (TemplateAtom("p2", ("X", "Y")), TemplateAtom("p3", ("Y", "Z"))),
        ),
    ]
    return [form for form in forms for _ in range(copies)]


_TEMPLATE_LINE = re.compile(
    r"^(?P<rule>.*?\.)\s*(?:#(?P<mult>\d+))?\s*(?:%.*)?$"
)
_ATOM = re.compile(r"(\$?[A-Za-z][A-Za-z0-9_]*)\s*\(\s*([^)]*)\)")


def parse_template_file(text: str) -> list[RuleTemplate]:
    """One template per line; blank lines and ``%`` comments allowed."""
    templates = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        m = _TEMPLATE_LINE.match(line)
        if m is None or not m.group("rule"):
            raise ParseError("malformed template line", lineno, 1)
        mult = int(m.group("mult")) if m.group("mult") else 1
        rule_text = m.group("rule").rstrip(".")
        if ":-" in rule_text:
            head_text, body_text = rule_text.split(":-", 1)
            body_parts = _split_atoms(body_text, lineno)
        else:
            head_text, body_parts = rule_text, []
        head = _parse_template_atom(head_text.strip(), lineno)
        body = tuple(_parse_template_atom(p, lineno) for p in body_parts)
        if not body:
            raise ParseError("template must have a body", lineno, 1)
        try:
            templates.append(RuleTemplate(head, body, mult))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, 1) from None
    return templates


def _split_atoms(text: str, lineno: int) -> list[str]:
    parts = []
    depth = 0
    current = []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    tail = "".join(current).strip()
    if tail:
        parts.append(tail)
    return parts


def _parse_template_atom(text: str, lineno: int) -> TemplateAtom:
    m = _ATOM.fullmatch(text.strip())
    if m is None:
        raise ParseError(f"malformed template atom {text!r}", lineno, 1)
    pred = m.group(1)
    if pred.startswith("$"):
        if pred != PINNED:
            raise ParseError(f"unknown pinned name {pred!r}", lineno, 1)
    args = tuple(a.strip() for a in m.group(2).split(","))
    if len(args) != 2 or not all(args):
        raise ParseError(f"template atoms take exactly 2 variables", lineno, 1)
    for a in args:
        if not re.fullmatch(r"[A-Z_][A-Za-z0-9_]*", a):
            raise ParseError(f"template arguments must be variables, got {a!r}", lineno, 1)
    return TemplateAtom(pred, args)


def instantiate(
    templates: list[RuleTemplate],
    query_pred: Symbol,
    kb: KnowledgeBase,
    theta: ParameterSet | None,
    seed: int,
) -> list[Symbol]:
    """Append one rule per template copy to the KB, creating a fresh
    rule-predicate symbol (with a random embedding row) for every
    placeholder of every copy. The pinned ``$q`` resolves to
    ``query_pred``. Returns the fresh symbols; deterministic given seed.
    """
    if query_pred.kind != Kind.RULE_GOAL_PRED:
        raise ValueError("query predicate must be a rule/goal predicate symbol")
    rng = np.random.default_rng(seed)
    fresh: list[Symbol] = []
    for t_idx, template in enumerate(templates):
        for copy in range(template.multiplicity):
            mapping: dict[str, Symbol] = {PINNED: query_pred}
            for ph in template.placeholders():
                text = _fresh_text(kb, query_pred.text, ph, t_idx, copy)
                sym = kb.symbols.intern(Kind.RULE_GOAL_PRED, text)
                mapping[ph] = sym
                fresh.append(sym)

            def build(atom: TemplateAtom) -> Atom:
                return Atom(
                    mapping[atom.predicate],
                    tuple(Variable(v) for v in atom.args),
                )

            kb.add_rule(Rule(build(template.head), tuple(map(build, template.body))))
    if theta is not None:
        ensure_symbol_rows(theta, fresh, rng)
    return fresh


def _fresh_text(kb: KnowledgeBase, qtext: str, ph: str, t_idx: int, copy: int) -> str:
    base = f"{ph}${qtext}${t_idx}.{copy}"
    text = base
    n = 0
    while kb.symbols.lookup(Kind.RULE_GOAL_PRED, text) is not None:
        n += 1
        text = f"{base}~{n}"
    return text
