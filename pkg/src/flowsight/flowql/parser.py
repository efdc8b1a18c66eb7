"""Tokenizer and recursive-descent parser for the query language.

Keywords are case-insensitive; dates are `YYYY-MM-DD hh:mm` in UTC.  The
`to` timestamp of a range is inclusive at minute resolution, so a range
ending `23:59` covers through the end of that minute.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

from ..hierarchy import FEATURE_BY_LABEL, Feature, ip_to_int

FLOW_FEATURES = ("src_ip", "dst_ip", "src_port", "dst_port")
ALL_FEATURES = ("site_id",) + FLOW_FEATURES + ("proto",)

COUNTER_WORDS = {"flow": "flows", "packet": "packets", "byte": "bytes"}
PROTO_WORDS = ("any", "tcp", "udp")
SELECT_KINDS = ("pop", "top", "hhh", "hc", "above")


class QLError(Exception):
    def __init__(self, message: str, line: int = 1, col: int = 0, token: str = ""):
        super().__init__(message)
        self.message = message
        self.line = line
        self.col = col
        self.token = token

    def caret_text(self) -> str:
        return f"line {self.line}, column {self.col}: {self.message}"


class QLSyntaxError(QLError):
    pass


class SemanticError(QLError):
    pass


_TOKEN_RE = re.compile(
    r"""
    (?P<WS>\s+)
  | (?P<DATE>\d{4}-\d{2}-\d{2})
  | (?P<IP>\d+\.\d+\.\d+\.\d+)
  | (?P<TIME>\d{1,2}:\d{2})
  | (?P<INT>\d+)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<SYM>[(),=|*\-])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    line = 1
    line_start = 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QLSyntaxError(
                f"unexpected character {text[pos]!r}",
                line,
                pos - line_start + 1,
                text[pos],
            )
        kind = m.lastgroup
        value = m.group()
        if kind == "WS":
            nl = value.count("\n")
            if nl:
                line += nl
                line_start = m.start() + value.rfind("\n") + 1
        else:
            tokens.append(Token(kind, value, line, m.start() - line_start + 1))
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


@dataclass(frozen=True)
class Atom:
    """One feature=value condition."""

    feature: str
    kind: str  # any | prefix | iter
    value: int = 0
    mask: int = 0
    iter_lo: Optional[int] = None
    iter_bits: Optional[int] = None

    def render(self) -> str:
        if self.kind == "any":
            return f"{self.feature}=ANY"
        if self.kind == "iter":
            if self.iter_lo is None:
                return f"{self.feature}=ITR"
            return f"{self.feature}=ITR-{self.iter_lo}|{self.iter_bits}"
        feat = FEATURE_BY_LABEL.get(self.feature)
        if feat is not None and feat.is_ip:
            from ..hierarchy import int_to_ip

            return f"{self.feature}={int_to_ip(self.value)}|{self.mask}"
        return f"{self.feature}={self.value}|{self.mask}"


@dataclass(frozen=True)
class OrNode:
    children: tuple

    def render(self) -> str:
        return " or ".join(
            c.render() if isinstance(c, Atom) else f"({c.render()})" for c in self.children
        )


@dataclass(frozen=True)
class AndNode:
    children: tuple

    def render(self) -> str:
        parts = []
        for c in self.children:
            if isinstance(c, OrNode):
                parts.append(f"({c.render()})")
            else:
                parts.append(c.render())
        return " and ".join(parts)


@dataclass
class Select:
    kind: str  # pop | top | hhh | hc | above | star
    k: Optional[int] = None
    threshold: Optional[int] = None
    percent: Optional[int] = None
    proto_scope: str = "any"
    counter: str = "flows"
    bin_minutes: Optional[int] = None

    def render(self) -> str:
        args = []
        if self.kind in ("top", "hc"):
            args.append(str(self.k))
        elif self.kind == "above":
            args.append(str(self.threshold))
        elif self.kind == "hhh":
            args.append(str(self.percent))
        args.append(self.proto_scope)
        inv = {v: k for k, v in COUNTER_WORDS.items()}
        args.append(inv[self.counter])
        if self.bin_minutes is not None:
            args.append(f"bin{self.bin_minutes}")
        name = "*" if self.kind == "star" else self.kind
        return f"{name}({','.join(args)})"


@dataclass
class QueryPlan:
    select: Select
    ranges: list[tuple[int, int]]  # [from, to) epoch seconds, normalized
    where: object  # Atom | AndNode | OrNode
    dnf: list[tuple[Atom, ...]] = field(default_factory=list)
    text: str = ""

    def render(self) -> str:
        parts = ["SELECT", self.select.render(), "FROM"]
        for a, b in self.ranges:
            start = datetime.fromtimestamp(a, tz=timezone.utc)
            end = datetime.fromtimestamp(b - 60, tz=timezone.utc)
            parts.append(
                f"(time {start:%Y-%m-%d %H:%M} to {end:%Y-%m-%d %H:%M})"
            )
        parts.append("WHERE")
        parts.append(self.where.render() if hasattr(self.where, "render") else str(self.where))
        return " ".join(parts)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str, tok: Optional[Token] = None) -> QLSyntaxError:
        tok = tok or self.peek()
        return QLSyntaxError(message, tok.line, tok.col, tok.text)

    def expect_keyword(self, word: str) -> Token:
        tok = self.next()
        if tok.kind != "IDENT" or tok.text.lower() != word:
            raise self.error(f"expected {word.upper()!r}", tok)
        return tok

    def expect_sym(self, sym: str) -> Token:
        tok = self.next()
        if tok.kind != "SYM" or tok.text != sym:
            raise self.error(f"expected {sym!r}", tok)
        return tok

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.text.lower() == word

    def at_sym(self, sym: str) -> bool:
        tok = self.peek()
        return tok.kind == "SYM" and tok.text == sym

    # -- grammar ------------------------------------------------------------

    def parse_query(self) -> QueryPlan:
        self.expect_keyword("select")
        select = self.parse_select()
        self.expect_keyword("from")
        ranges = [self.parse_range()]
        while self.at_sym("("):
            ranges.append(self.parse_range())
        self.expect_keyword("where")
        where = self.parse_disj()
        tok = self.next()
        if tok.kind != "EOF":
            raise self.error("unexpected trailing input", tok)
        plan = QueryPlan(select=select, ranges=ranges, where=where, text=self.text)
        plan.dnf = to_dnf(where)
        self.check_semantics(plan)
        return plan

    def parse_select(self) -> Select:
        tok = self.next()
        if tok.kind == "SYM" and tok.text == "*":
            kind = "star"
        elif tok.kind == "IDENT" and tok.text.lower() in SELECT_KINDS:
            kind = tok.text.lower()
        else:
            raise self.error("expected one of pop, top, hhh, hc, above, *", tok)
        select = Select(kind=kind)
        if self.at_sym("("):
            self.next()
            self.parse_args(select)
            self.expect_sym(")")
        self.finish_select(select, tok)
        return select

    def parse_args(self, select: Select) -> None:
        ints: list[Token] = []
        while True:
            tok = self.next()
            if tok.kind == "INT":
                ints.append(tok)
            elif tok.kind == "IDENT":
                word = tok.text.lower()
                if word in PROTO_WORDS:
                    select.proto_scope = word
                elif word in COUNTER_WORDS:
                    select.counter = COUNTER_WORDS[word]
                elif re.fullmatch(r"bin\d+", word):
                    select.bin_minutes = int(word[3:])
                elif word == "bin":
                    num = self.next()
                    if num.kind != "INT":
                        raise self.error("expected bin width", num)
                    select.bin_minutes = int(num.text)
                else:
                    raise self.error(f"unknown argument {tok.text!r}", tok)
            else:
                raise self.error("bad select argument", tok)
            if self.at_sym(","):
                self.next()
                continue
            break
        if len(ints) > 1:
            raise SemanticError(
                "more than one numeric argument", ints[1].line, ints[1].col, ints[1].text
            )
        if ints:
            value = int(ints[0].text)
            if select.kind in ("top", "hc"):
                select.k = value
            elif select.kind == "above":
                select.threshold = value
            elif select.kind == "hhh":
                select.percent = value
            else:
                raise SemanticError(
                    f"{select.kind} takes no numeric argument",
                    ints[0].line,
                    ints[0].col,
                    ints[0].text,
                )

    def finish_select(self, select: Select, tok: Token) -> None:
        if select.kind in ("top", "hc"):
            if select.k is None:
                raise SemanticError(f"{select.kind} needs a k argument", tok.line, tok.col)
            if select.k < 1:
                raise SemanticError("k must be >= 1", tok.line, tok.col)
        if select.kind == "above":
            if select.threshold is None:
                raise SemanticError("above needs a threshold argument", tok.line, tok.col)
            if select.threshold < 0:
                raise SemanticError("threshold must be >= 0", tok.line, tok.col)
        if select.kind == "hhh":
            if select.percent is None:
                raise SemanticError("hhh needs a percent argument", tok.line, tok.col)
            if not 0 < select.percent < 100:
                raise SemanticError("hhh percent must be in (0, 100)", tok.line, tok.col)
        if select.bin_minutes is not None and select.bin_minutes < 1:
            raise SemanticError("bin width must be >= 1 minute", tok.line, tok.col)

    def parse_range(self) -> tuple[int, int]:
        self.expect_sym("(")
        self.expect_keyword("time")
        start = self.parse_timestamp()
        self.expect_keyword("to")
        end_tok = self.peek()
        end = self.parse_timestamp()
        self.expect_sym(")")
        if start >= end:
            raise SemanticError(
                "empty time range (from must be before to)", end_tok.line, end_tok.col
            )
        return (start, end + 60)

    def parse_timestamp(self) -> int:
        d = self.next()
        if d.kind != "DATE":
            raise self.error("expected date YYYY-MM-DD", d)
        t = self.next()
        if t.kind != "TIME":
            raise self.error("expected time hh:mm", t)
        try:
            dt = datetime.strptime(f"{d.text} {t.text}", "%Y-%m-%d %H:%M")
        except ValueError:
            raise self.error("bad date or time", d) from None
        return int(dt.replace(tzinfo=timezone.utc).timestamp())

    def parse_disj(self):
        parts = [self.parse_conj()]
        while self.at_keyword("or"):
            self.next()
            parts.append(self.parse_conj())
        return parts[0] if len(parts) == 1 else OrNode(tuple(parts))

    def parse_conj(self):
        parts = [self.parse_atom()]
        while self.at_keyword("and"):
            self.next()
            parts.append(self.parse_atom())
        return parts[0] if len(parts) == 1 else AndNode(tuple(parts))

    def parse_atom(self):
        if self.at_sym("("):
            self.next()
            inner = self.parse_disj()
            self.expect_sym(")")
            return inner
        tok = self.next()
        if tok.kind != "IDENT" or tok.text.lower() not in ALL_FEATURES:
            raise self.error(
                f"expected a feature name ({', '.join(ALL_FEATURES)})", tok
            )
        feature = tok.text.lower()
        self.expect_sym("=")
        return self.parse_value(feature)

    def parse_value(self, feature: str) -> Atom:
        tok = self.next()
        if tok.kind == "IDENT" and tok.text.upper() == "ANY":
            return Atom(feature, "any")
        if tok.kind == "IDENT" and tok.text.upper() == "ITR":
            if feature != "site_id":
                raise SemanticError(
                    "ITR only applies to site_id", tok.line, tok.col, tok.text
                )
            if self.at_sym("-"):
                self.next()
                lo = self.next()
                if lo.kind != "INT":
                    raise self.error("expected iterator start", lo)
                self.expect_sym("|")
                bits = self.next()
                if bits.kind != "INT":
                    raise self.error("expected iterator width", bits)
                return Atom(feature, "iter", iter_lo=int(lo.text), iter_bits=int(bits.text))
            return Atom(feature, "iter")
        if tok.kind == "IP":
            if feature not in ("src_ip", "dst_ip"):
                raise SemanticError(
                    f"{feature} does not take an IP value", tok.line, tok.col, tok.text
                )
            value = ip_to_int(tok.text)
            mask = 32
            if self.at_sym("|"):
                self.next()
                m = self.next()
                if m.kind != "INT":
                    raise self.error("expected mask length", m)
                mask = int(m.text)
            if not 0 <= mask <= 32:
                raise SemanticError("IP mask out of range", tok.line, tok.col, tok.text)
            return Atom(feature, "prefix", value=value, mask=mask)
        if tok.kind == "INT":
            value = int(tok.text)
            if feature in ("src_ip", "dst_ip"):
                raise SemanticError(
                    f"{feature} needs dotted-quad syntax", tok.line, tok.col, tok.text
                )
            if feature == "site_id":
                if self.at_sym("|"):
                    raise SemanticError(
                        "site_id does not take a mask", tok.line, tok.col, tok.text
                    )
                return Atom(feature, "prefix", value=value, mask=32)
            if feature == "proto":
                if value > 255:
                    raise SemanticError("proto out of range", tok.line, tok.col, tok.text)
                return Atom(feature, "prefix", value=value, mask=8)
            width = FEATURE_BY_LABEL[feature].width
            mask = width
            if self.at_sym("|"):
                self.next()
                m = self.next()
                if m.kind != "INT":
                    raise self.error("expected mask length", m)
                mask = int(m.text)
            if not 0 <= mask <= width:
                raise SemanticError("port mask out of range", tok.line, tok.col, tok.text)
            if value >= (1 << width):
                raise SemanticError(
                    f"{feature} value out of range", tok.line, tok.col, tok.text
                )
            return Atom(feature, "prefix", value=value, mask=mask)
        raise self.error("expected a value (ANY, prefix, integer or ITR)", tok)

    # -- plan-level validation ------------------------------------------------

    def check_semantics(self, plan: QueryPlan) -> None:
        if plan.select.kind == "hc":
            if len(plan.ranges) != 2:
                raise SemanticError("hc needs exactly two time ranges")
            if plan.select.bin_minutes is not None:
                raise SemanticError("hc does not combine with answer bins")
        bin_minutes = plan.select.bin_minutes
        if bin_minutes is not None:
            width = bin_minutes * 60
            for a, b in plan.ranges:
                if (b - a) % width != 0:
                    raise SemanticError(
                        f"bin{bin_minutes} does not divide a "
                        f"{(b - a) // 60}-minute range"
                    )
        for conj in plan.dnf:
            for atom in conj:
                if atom.feature == "proto" and atom.kind == "prefix":
                    raise SemanticError(
                        "no stored summary carries the protocol; use the "
                        "select scope (any/tcp/udp) or proto=ANY"
                    )


def parse(text: str) -> QueryPlan:
    return _Parser(text).parse_query()


def render(plan: QueryPlan) -> str:
    return plan.render()


def _atom_sort_key(atom: Atom):
    return (
        ALL_FEATURES.index(atom.feature),
        atom.kind,
        atom.value,
        atom.mask,
        atom.iter_lo if atom.iter_lo is not None else -1,
        atom.iter_bits if atom.iter_bits is not None else -1,
    )


def to_dnf(where) -> list[tuple[Atom, ...]]:
    """Flatten the boolean tree to a list of conjunctions.

    Duplicate conjunctions collapse; a conjunction subsumed by a weaker one
    (a subset of its atoms) is dropped.
    """

    def walk(node) -> list[frozenset[Atom]]:
        if isinstance(node, Atom):
            return [frozenset((node,))]
        if isinstance(node, OrNode):
            out = []
            for child in node.children:
                out.extend(walk(child))
            return out
        if isinstance(node, AndNode):
            acc: list[frozenset[Atom]] = [frozenset()]
            for child in node.children:
                branches = walk(child)
                acc = [a | b for a in acc for b in branches]
            return acc
        raise TypeError(f"unexpected node {node!r}")

    conjs = walk(where)
    # dedup and subsumption: keep a conjunction only if no other (kept or
    # candidate) is a strict subset of it
    unique: list[frozenset[Atom]] = []
    for c in conjs:
        if c not in unique:
            unique.append(c)
    kept = [
        c
        for c in unique
        if not any(other < c for other in unique)
    ]
    return [tuple(sorted(c, key=_atom_sort_key)) for c in kept]
