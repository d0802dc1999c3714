"""Function-free logic program model: symbols, atoms, rules, parsing.

All atoms are binary (subject/object triples). Symbols live in three
namespaces that are encoded differently downstream: entities, fact
predicates (textual surface patterns of triples) and rule/goal
predicates (predicates appearing in rule heads, rule bodies and
queries). The same surface text may exist in several namespaces as
distinct symbols.
"""

from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, TextIO


class Kind(enum.Enum):
    """Symbol namespace, fixed at creation."""

    ENTITY = "entity"
    FACT_PRED = "fact_pred"
    RULE_GOAL_PRED = "rule_goal_pred"


@dataclass(frozen=True)
class Symbol:
    kind: Kind
    text: str
    id: int

    def __repr__(self) -> str:
        return f"Symbol({self.kind.value}:{self.text!r}#{self.id})"


@dataclass(frozen=True)
class Variable:
    name: str

    def __repr__(self) -> str:
        return f"Var({self.name})"


@dataclass(frozen=True)
class Constant:
    symbol: Symbol

    def __repr__(self) -> str:
        return f"Const({self.symbol.text!r})"


Term = Variable | Constant


@dataclass(frozen=True)
class Atom:
    predicate: Symbol
    args: tuple[Term, Term]

    def variables(self) -> Iterator[Variable]:
        for t in self.args:
            if isinstance(t, Variable):
                yield t

    def is_ground(self) -> bool:
        return all(isinstance(t, Constant) for t in self.args)


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple[Atom, ...] = ()

    @property
    def body_size(self) -> int:
        return len(self.body)

    def is_fact(self) -> bool:
        return not self.body and self.head.is_ground()


Substitution = dict[Variable, Term]


class SymbolTable:
    """Interns text -> Symbol bijectively per kind."""

    def __init__(self) -> None:
        self._by_text: dict[Kind, dict[str, Symbol]] = {k: {} for k in Kind}
        self._next_id = itertools.count()

    def intern(self, kind: Kind, text: str) -> Symbol:
        table = self._by_text[kind]
        sym = table.get(text)
        if sym is None:
            sym = Symbol(kind, text, next(self._next_id))
            table[text] = sym
        return sym

    def lookup(self, kind: Kind, text: str) -> Symbol | None:
        return self._by_text[kind].get(text)

    def symbols(self, kind: Kind) -> list[Symbol]:
        return list(self._by_text[kind].values())

    def __contains__(self, sym: Symbol) -> bool:
        return self._by_text[sym.kind].get(sym.text) is sym


class KnowledgeBase:
    """Immutable-after-load container of facts, rules and symbol tables.

    Facts are rules with an empty body; their predicates are in the
    FACT_PRED namespace. Rule head/body predicates and query predicates
    are in RULE_GOAL_PRED.
    """

    def __init__(self) -> None:
        self.symbols = SymbolTable()
        self.facts: list[Rule] = []
        self.rules: list[Rule] = []

    def add_fact(self, fact: Rule) -> None:
        if not fact.is_fact():
            raise ValueError("facts must be ground atoms with no body")
        self.facts.append(fact)

    def add_rule(self, rule: Rule) -> None:
        if rule.body_size == 0:
            raise ValueError("rules must have a non-empty body")
        self.rules.append(rule)

    def entities(self) -> list[Symbol]:
        return self.symbols.symbols(Kind.ENTITY)

    def fact_predicates(self) -> list[Symbol]:
        return self.symbols.symbols(Kind.FACT_PRED)

    def rulegoal_predicates(self) -> list[Symbol]:
        return self.symbols.symbols(Kind.RULE_GOAL_PRED)


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>%[^\n]*)
  | (?P<implies>:-)
  | (?P<punct>[(),.])
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<name>[a-z][A-Za-z0-9_]*)
  | (?P<quoted>'[^']*')
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(
                f"unexpected character {text[pos]!r}", line, pos - line_start + 1
            )
        kind = m.lastgroup
        tok = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, tok, line, pos - line_start + 1))
        newlines = tok.count("\n")
        if newlines:
            line += newlines
            line_start = pos + tok.rindex("\n") + 1
        pos = m.end()
    return tokens


class _Parser:
    """Recursive-descent parser for the triple Datalog grammar.

    rule  := atom (":-" atom ("," atom)*)? "."
    atom  := pred "(" term "," term ")"
    term  := VARIABLE | NAME | QUOTED
    """

    def __init__(self, tokens: list[_Token]) -> None:
        self.tokens = tokens
        self.pos = 0

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _error(self, message: str) -> ParseError:
        tok = self._peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else _Token("", "", 1, 1)
            return ParseError(message + ", got end of input", last.line, last.column)
        return ParseError(f"{message}, got {tok.text!r}", tok.line, tok.column)

    def _expect(self, text: str) -> _Token:
        tok = self._peek()
        if tok is None or tok.text != text:
            raise self._error(f"expected {text!r}")
        self.pos += 1
        return tok

    def _symbol_text(self) -> str:
        tok = self._peek()
        if tok is None or tok.kind not in ("name", "quoted"):
            raise self._error("expected a constant or quoted symbol")
        self.pos += 1
        return tok.text[1:-1] if tok.kind == "quoted" else tok.text

    def parse_clauses(self) -> list[tuple[tuple, list[tuple], int, int]]:
        """Returns raw clauses as (head, body, line, column) with atoms as
        (pred_text, [terms]) and terms as ('var', name) | ('const', text)."""
        clauses = []
        while self._peek() is not None:
            start = self._peek()
            head = self._parse_atom()
            body = []
            tok = self._peek()
            if tok is not None and tok.text == ":-":
                self.pos += 1
                body.append(self._parse_atom())
                while self._peek() is not None and self._peek().text == ",":
                    self.pos += 1
                    body.append(self._parse_atom())
            self._expect(".")
            clauses.append((head, body, start.line, start.column))
        return clauses

    def _parse_atom(self) -> tuple:
        tok = self._peek()
        pred = self._symbol_text()
        self._expect("(")
        terms = [self._parse_term()]
        while self._peek() is not None and self._peek().text == ",":
            self.pos += 1
            terms.append(self._parse_term())
        self._expect(")")
        if len(terms) != 2:
            raise ParseError(
                f"atoms must have exactly 2 arguments, {pred!r} has {len(terms)}",
                tok.line,
                tok.column,
            )
        return (pred, terms)

    def _parse_term(self) -> tuple:
        tok = self._peek()
        if tok is not None and tok.kind == "var":
            self.pos += 1
            return ("var", tok.text)
        return ("const", self._symbol_text())


def parse_program(text: str, kb: KnowledgeBase | None = None) -> KnowledgeBase:
    """Parse a Datalog program into a knowledge base.

    Ground bodyless clauses become facts (FACT_PRED predicates); clauses
    with a body become rules (RULE_GOAL_PRED predicates). A bodyless
    clause containing variables, or a rule whose head has a variable not
    occurring in its body, is rejected.
    """
    kb = kb if kb is not None else KnowledgeBase()
    clauses = _Parser(_tokenize(text)).parse_clauses()
    for (head_pred, head_terms), body, line, col in clauses:
        if not body:
            if any(k == "var" for k, _ in head_terms):
                raise ParseError(
                    "facts must be ground (variable in bodyless clause)", line, col
                )
            pred = kb.symbols.intern(Kind.FACT_PRED, head_pred)
            args = tuple(
                Constant(kb.symbols.intern(Kind.ENTITY, t)) for _, t in head_terms
            )
            kb.add_fact(Rule(Atom(pred, args)))
            continue
        head = _intern_atom(kb, head_pred, head_terms)
        body_atoms = tuple(_intern_atom(kb, p, ts) for p, ts in body)
        body_vars = {v for a in body_atoms for v in a.variables()}
        for v in head.variables():
            if v not in body_vars:
                raise ParseError(
                    f"variable {v.name} appears only in the head", line, col
                )
        kb.add_rule(Rule(head, body_atoms))
    return kb


def _intern_atom(kb: KnowledgeBase, pred_text: str, terms: list[tuple]) -> Atom:
    pred = kb.symbols.intern(Kind.RULE_GOAL_PRED, pred_text)
    args = []
    for k, t in terms:
        if k == "var":
            args.append(Variable(t))
        else:
            args.append(Constant(kb.symbols.intern(Kind.ENTITY, t)))
    return Atom(pred, tuple(args))


def parse_query(text: str, kb: KnowledgeBase) -> Atom:
    """Parse a single goal atom. The predicate is interned as a
    rule/goal predicate; constants must already be known entities."""
    clauses = _Parser(_tokenize(text.strip().rstrip(".") + " .")).parse_clauses()
    if len(clauses) != 1 or clauses[0][1]:
        raise ParseError("expected a single goal atom", 1, 1)
    (pred_text, terms), _, line, col = clauses[0]
    pred = kb.symbols.intern(Kind.RULE_GOAL_PRED, pred_text)
    args = []
    for k, t in terms:
        if k == "var":
            args.append(Variable(t))
        else:
            sym = kb.symbols.lookup(Kind.ENTITY, t)
            if sym is None:
                raise ParseError(f"unknown entity {t!r} in goal", line, col)
            args.append(Constant(sym))
    return Atom(pred, tuple(args))


def parse_triple_file(
    stream: Iterable[str] | TextIO, kb: KnowledgeBase | None = None
) -> tuple[KnowledgeBase, list[Rule]]:
    """Load tab-separated (subject, pattern, object) lines as facts.

    The pattern column (the entity-blinded sentence) is interned as a
    fact predicate; subject and object as entities. Returns the KB and
    the facts added, in input order.
    """
    kb = kb if kb is not None else KnowledgeBase()
    added = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ValueError(
                f"line {lineno}: expected 3 tab-separated columns, got {len(cols)}"
            )
        subject, pattern, obj = cols
        if not subject or not pattern or not obj:
            raise ValueError(f"line {lineno}: empty field in triple")
        pred = kb.symbols.intern(Kind.FACT_PRED, pattern)
        args = (
            Constant(kb.symbols.intern(Kind.ENTITY, subject)),
            Constant(kb.symbols.intern(Kind.ENTITY, obj)),
        )
        fact = Rule(Atom(pred, args))
        kb.add_fact(fact)
        added.append(fact)
    return kb, added


def resolve(term: Term, sub: Substitution) -> Term:
    """Follow variable bindings to a fixed point."""
    seen = set()
    while isinstance(term, Variable) and term in sub:
        if term in seen:  # cannot happen for function-free bindings, but be safe
            break
        seen.add(term)
        term = sub[term]
    return term


def apply_substitution(atom: Atom, sub: Substitution) -> Atom:
    """Replace every bound variable by its fully-resolved binding."""
    return Atom(atom.predicate, tuple(resolve(t, sub) for t in atom.args))


class FreshNames:
    """Process-wide source of fresh variable suffixes for one search."""

    def __init__(self) -> None:
        self._counter = itertools.count(1)

    def next(self) -> int:
        return next(self._counter)


def standardize_apart(rule: Rule, names: FreshNames) -> Rule:
    """Rename all variables in a rule to globally fresh names."""
    if not any(True for a in (rule.head, *rule.body) for _ in a.variables()):
        return rule
    n = names.next()
    mapping: dict[Variable, Variable] = {}

    def rename(atom: Atom) -> Atom:
        args = []
        for t in atom.args:
            if isinstance(t, Variable):
                if t not in mapping:
                    mapping[t] = Variable(f"{t.name}_{n}")
                args.append(mapping[t])
            else:
                args.append(t)
        return Atom(atom.predicate, tuple(args))

    return Rule(rename(rule.head), tuple(rename(a) for a in rule.body))


# -- printing ---------------------------------------------------------------

_BARE_NAME_RE = re.compile(r"[a-z][A-Za-z0-9_]*\Z")


def format_symbol(sym: Symbol) -> str:
    if _BARE_NAME_RE.match(sym.text):
        return sym.text
    return "'" + sym.text + "'"


def format_term(term: Term) -> str:
    if isinstance(term, Variable):
        return term.name
    return format_symbol(term.symbol)


def format_atom(atom: Atom) -> str:
    return (
        f"{format_symbol(atom.predicate)}"
        f"({format_term(atom.args[0])},{format_term(atom.args[1])})"
    )


def format_rule(rule: Rule) -> str:
    if not rule.body:
        return format_atom(rule.head) + "."
    body = ", ".join(format_atom(a) for a in rule.body)
    return f"{format_atom(rule.head)} :- {body}."


def format_program(kb: KnowledgeBase) -> str:
    lines = [format_rule(f) for f in kb.facts]
    lines += [format_rule(r) for r in kb.rules]
    return "\n".join(lines) + ("\n" if lines else "")
