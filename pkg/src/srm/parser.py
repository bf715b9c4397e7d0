"""Parser for structure files.

A structure file declares an ambient dimension, a generating family of
polynomial vector fields, a volume density, a working box, and optional
parametrized strata:

    # Grushin plane
    dim = 2
    field X1 = (1, 0)
    field X2 = (0, x1)
    volume = 1
    box = [-2, 2] x [-8, 8]
    probe = (1, 0)
    stratum axis : k = 1 ; map = (0, x1) ; parambox = [-2, 2]

Expressions use +, -, *, ^, parentheses, integer/decimal literals and
variables x1..xn; / is accepted with a constant divisor so that familiar
forms like x1^2/2 parse.  Statements are line-oriented; # starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .errors import ParseError
from .expr import Expr
from .structure import SRStructure, Stratum
from .vf import VectorField

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+\.\d+|\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[=+\-*/^():;,\[\]]))"
)


@dataclass
class _Tok:
    kind: str  # number | name | op | end
    text: str
    line: int
    col: int


class _Tokens:
    def __init__(self, text: str, line: int):
        self.items: list[_Tok] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                stripped = text[pos:].lstrip()
                if not stripped:
                    break
                col = pos + (len(text[pos:]) - len(stripped)) + 1
                raise ParseError(f"unrecognized token {stripped[0]!r}", line, col)
            kind = m.lastgroup
            self.items.append(_Tok(kind, m.group(kind), line, m.start(kind) + 1))
            pos = m.end()
        self.items.append(_Tok("end", "", line, len(text) + 1))
        self.pos = 0

    def peek(self) -> _Tok:
        return self.items[self.pos]

    def next(self) -> _Tok:
        tok = self.items[self.pos]
        if tok.kind != "end":
            self.pos += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.next()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, got {tok.text or 'end of line'!r}",
                             tok.line, tok.col)
        return tok

    def at_end(self) -> bool:
        return self.peek().kind == "end"


_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")


def _parse_expr(toks: _Tokens, max_var: int) -> Expr:
    return _parse_sum(toks, max_var)


def _parse_sum(toks: _Tokens, max_var: int) -> Expr:
    left = _parse_product(toks, max_var)
    while toks.peek().text in ("+", "-"):
        op = toks.next().text
        right = _parse_product(toks, max_var)
        left = left + right if op == "+" else left - right
    return left


def _parse_product(toks: _Tokens, max_var: int) -> Expr:
    left = _parse_factor(toks, max_var)
    while toks.peek().text in ("*", "/"):
        tok = toks.next()
        right = _parse_factor(toks, max_var)
        if tok.text == "*":
            left = left * right
        else:
            if not right.is_constant or right.constant_value() == 0:
                raise ParseError("divisor must be a nonzero constant",
                                 tok.line, tok.col)
            left = left / right
    return left


def _parse_factor(toks: _Tokens, max_var: int) -> Expr:
    tok = toks.peek()
    if tok.text == "-":
        toks.next()
        return -_parse_factor(toks, max_var)
    if tok.text == "+":
        toks.next()
        return _parse_factor(toks, max_var)
    base = _parse_atom(toks, max_var)
    if toks.peek().text == "^":
        caret = toks.next()
        exp_tok = toks.next()
        neg = False
        if exp_tok.text == "-":
            neg = True
            exp_tok = toks.next()
        if exp_tok.kind != "number" or "." in exp_tok.text:
            raise ParseError("exponent must be an integer", caret.line, caret.col)
        e = int(exp_tok.text)
        if neg:
            if not base.is_constant:
                raise ParseError("negative exponent on a non-constant",
                                 caret.line, caret.col)
            return base ** (-e)
        return base ** e
    return base


def _parse_atom(toks: _Tokens, max_var: int) -> Expr:
    tok = toks.next()
    if tok.kind == "number":
        return Expr.constant(Fraction(tok.text))
    if tok.kind == "name":
        m = _VAR_RE.match(tok.text)
        if not m:
            raise ParseError(f"unknown identifier {tok.text!r}", tok.line, tok.col)
        idx = int(m.group(1))
        if idx > max_var:
            raise ParseError(
                f"unknown variable x{idx}: only x1..x{max_var} are in scope",
                tok.line, tok.col)
        return Expr.var(idx)
    if tok.text == "(":
        inner = _parse_expr(toks, max_var)
        toks.expect(")")
        return inner
    raise ParseError(f"unexpected {tok.text or 'end of line'!r}", tok.line, tok.col)


def _parse_number(toks: _Tokens) -> Fraction:
    expr = _parse_expr(toks, max_var=0)
    if not expr.is_constant:
        tok = toks.peek()
        raise ParseError("expected a constant", tok.line, tok.col)
    return expr.constant_value()


def _parse_tuple(toks: _Tokens, max_var: int) -> tuple[Expr, ...]:
    toks.expect("(")
    items = [_parse_expr(toks, max_var)]
    while toks.peek().text == ",":
        toks.next()
        items.append(_parse_expr(toks, max_var))
    toks.expect(")")
    return tuple(items)


def _parse_intervals(toks: _Tokens) -> tuple[tuple[Fraction, Fraction], ...]:
    out = []
    while True:
        tok = toks.expect("[")
        lo = _parse_number(toks)
        toks.expect(",")
        hi = _parse_number(toks)
        toks.expect("]")
        if hi <= lo:
            raise ParseError("empty interval", tok.line, tok.col)
        out.append((lo, hi))
        nxt = toks.peek()
        if nxt.kind == "name" and nxt.text == "x":
            toks.next()
            continue
        return tuple(out)


def parse_structure(text: str, name: str = "<string>") -> SRStructure:
    """Parse a structure file into an SRStructure (not yet validated)."""
    dim = None
    fields: list[tuple[str, tuple[Expr, ...]]] = []
    volume = None
    box = None
    probe = None
    strata: list[Stratum] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        toks = _Tokens(line, lineno)
        head = toks.next()
        if head.kind != "name":
            raise ParseError(f"unexpected {head.text!r}", head.line, head.col)

        if head.text == "dim":
            toks.expect("=")
            dim = int(_parse_number(toks))
            if dim < 1:
                raise ParseError("dim must be a positive integer", head.line, head.col)
        elif head.text == "field":
            if dim is None:
                raise ParseError("dim must be declared before fields",
                                 head.line, head.col)
            name_tok = toks.next()
            if name_tok.kind != "name":
                raise ParseError("expected field name", name_tok.line, name_tok.col)
            toks.expect("=")
            comps = _parse_tuple(toks, max_var=dim)
            if len(comps) != dim:
                raise ParseError(
                    f"field {name_tok.text} has {len(comps)} components, expected {dim}",
                    name_tok.line, name_tok.col)
            fields.append((name_tok.text, comps))
        elif head.text == "volume":
            if dim is None:
                raise ParseError("dim must be declared before volume",
                                 head.line, head.col)
            toks.expect("=")
            volume = _parse_expr(toks, max_var=dim)
        elif head.text == "box":
            if dim is None:
                raise ParseError("dim must be declared before box",
                                 head.line, head.col)
            toks.expect("=")
            box = _parse_intervals(toks)
            if len(box) != dim:
                raise ParseError(f"box has {len(box)} intervals, expected {dim}",
                                 head.line, head.col)
        elif head.text == "probe":
            if dim is None:
                raise ParseError("dim must be declared before probe",
                                 head.line, head.col)
            toks.expect("=")
            comps = _parse_tuple(toks, max_var=0)
            if len(comps) != dim:
                raise ParseError(f"probe has {len(comps)} coordinates, expected {dim}",
                                 head.line, head.col)
            probe = tuple(c.constant_value() for c in comps)
        elif head.text == "stratum":
            if dim is None:
                raise ParseError("dim must be declared before strata",
                                 head.line, head.col)
            strata.append(_parse_stratum(toks, dim))
        else:
            raise ParseError(f"unknown statement {head.text!r}", head.line, head.col)
        if not toks.at_end():
            tok = toks.peek()
            raise ParseError(f"trailing input {tok.text!r}", tok.line, tok.col)

    if dim is None:
        raise ParseError("missing dim declaration")
    if not fields:
        raise ParseError("m >= 1 required: declare at least one field")
    if box is None:
        raise ParseError("missing box declaration")
    if volume is None:
        volume = Expr.one

    return SRStructure(
        name=name,
        dim=dim,
        field_names=tuple(n for n, _ in fields),
        fields=tuple(VectorField(dim, comps) for _, comps in fields),
        volume=volume,
        box=box,
        probe=probe,
        strata=tuple(strata),
    )


def _parse_stratum(toks: _Tokens, dim: int) -> Stratum:
    name_tok = toks.next()
    if name_tok.kind != "name":
        raise ParseError("expected stratum name", name_tok.line, name_tok.col)
    toks.expect(":")
    k = None
    smap = None
    parambox = None
    while True:
        key = toks.next()
        if key.kind != "name":
            raise ParseError("expected stratum clause", key.line, key.col)
        toks.expect("=")
        if key.text == "k":
            k = int(_parse_number(toks))
            if not 1 <= k <= dim:
                raise ParseError(f"stratum dimension k={k} out of range 1..{dim}",
                                 key.line, key.col)
        elif key.text == "map":
            if k is None:
                raise ParseError("k must come before map", key.line, key.col)
            smap = _parse_tuple(toks, max_var=k)
            if len(smap) != dim:
                raise ParseError(
                    f"stratum map has {len(smap)} components, expected {dim}",
                    key.line, key.col)
        elif key.text == "parambox":
            if k is None:
                raise ParseError("k must come before parambox", key.line, key.col)
            parambox = _parse_intervals(toks)
            if len(parambox) != k:
                raise ParseError(
                    f"parambox has {len(parambox)} intervals, expected {k}",
                    key.line, key.col)
        else:
            raise ParseError(f"unknown stratum clause {key.text!r}", key.line, key.col)
        if toks.peek().text == ";":
            toks.next()
            continue
        break
    if k is None or smap is None or parambox is None:
        raise ParseError("stratum needs k, map and parambox",
                         name_tok.line, name_tok.col)
    return Stratum(name=name_tok.text, k=k, map=smap, parambox=parambox)


def load_structure(path) -> SRStructure:
    """Parse and validate a structure file from disk."""
    from pathlib import Path

    p = Path(path)
    structure = parse_structure(p.read_text(), name=p.stem)
    structure.validate()
    return structure
