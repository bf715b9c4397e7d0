"""Exact multivariate polynomials over the rationals.

Vector-field components are polynomials with Fraction coefficients kept in
a canonical sparse form: a map from monomials to nonzero coefficients,
monomials stored as sorted (variable index, exponent) pairs with 1-based
indices.  Structural equality of the canonical form decides semantic
equality, which is what makes bracket computations, rank decisions and
homogeneity audits exact rather than floating-point judgements.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

# ((index, exponent), ...) with indices ascending, exponents >= 1
Monomial = tuple


def as_fraction(value) -> Fraction:
    """Coerce ints, Fractions and floats (exactly) to Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        return Fraction(float(value))
    if isinstance(value, str):
        return Fraction(value)
    raise TypeError(f"not a rational scalar: {value!r}")


def _merge(acc: dict, mono: Monomial, coeff: Fraction) -> None:
    cur = acc.get(mono)
    new = coeff if cur is None else cur + coeff
    if new == 0:
        acc.pop(mono, None)
    else:
        acc[mono] = new


class Expr:
    """A polynomial in variables x1, x2, ... in canonical form."""

    __slots__ = ("_terms",)

    def __init__(self, _terms: dict | None = None):
        # private: _terms must already be canonical
        self._terms = _terms or {}

    # -- constructors -------------------------------------------------

    @staticmethod
    def constant(value) -> "Expr":
        c = as_fraction(value)
        return Expr({(): c} if c != 0 else {})

    @staticmethod
    def var(index: int) -> "Expr":
        if index < 1:
            raise ValueError("variable indices are 1-based")
        return Expr({((index, 1),): Fraction(1)})

    @staticmethod
    def from_terms(pairs: Iterable[tuple[Monomial, object]]) -> "Expr":
        acc: dict = {}
        for mono, coeff in pairs:
            mono = tuple(sorted((int(i), int(e)) for i, e in mono if e))
            for i, e in mono:
                if i < 1 or e < 1:
                    raise ValueError(f"bad monomial entry ({i},{e})")
            _merge(acc, mono, as_fraction(coeff))
        return Expr(acc)

    zero = None  # set after class body
    one = None

    # -- inspection ---------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self._terms

    @property
    def is_constant(self) -> bool:
        return all(m == () for m in self._terms)

    def constant_value(self) -> Fraction:
        if not self.is_constant:
            raise ValueError(f"not a constant: {self}")
        return self._terms.get((), Fraction(0))

    def terms(self):
        """Iterate (monomial, coefficient) pairs in canonical order."""
        return sorted(self._terms.items(), key=lambda kv: _mono_key(kv[0]))

    def max_var(self) -> int:
        top = 0
        for mono in self._terms:
            for i, _ in mono:
                top = max(top, i)
        return top

    def total_degree(self) -> int:
        if not self._terms:
            return 0
        return max(sum(e for _, e in m) for m in self._terms)

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other) -> "Expr":
        other = _coerce(other)
        acc = dict(self._terms)
        for mono, coeff in other._terms.items():
            _merge(acc, mono, coeff)
        return Expr(acc)

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        return Expr({m: -c for m, c in self._terms.items()})

    def __sub__(self, other) -> "Expr":
        return self + (-_coerce(other))

    def __rsub__(self, other) -> "Expr":
        return _coerce(other) + (-self)

    def __mul__(self, other) -> "Expr":
        other = _coerce(other)
        acc: dict = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                _merge(acc, _mono_mul(m1, m2), c1 * c2)
        return Expr(acc)

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> "Expr":
        if not isinstance(exponent, (int, np.integer)):
            raise TypeError("exponents must be integers")
        exponent = int(exponent)
        if exponent < 0:
            if self.is_constant:
                return Expr.constant(self.constant_value() ** exponent)
            raise ValueError("negative powers of non-constant expressions")
        out = Expr.one
        base = self
        e = exponent
        while e:
            if e & 1:
                out = out * base
            base = base * base if e > 1 else base
            e >>= 1
        return out

    def __truediv__(self, other) -> "Expr":
        other = _coerce(other)
        if not other.is_constant:
            raise ValueError("division only by nonzero constants")
        c = other.constant_value()
        if c == 0:
            raise ZeroDivisionError("division by zero constant")
        return self * Expr.constant(Fraction(1) / c)

    def scale(self, factor) -> "Expr":
        f = as_fraction(factor)
        if f == 0:
            return Expr()
        return Expr({m: c * f for m, c in self._terms.items()})

    # -- calculus -----------------------------------------------------

    def diff(self, index: int) -> "Expr":
        """Partial derivative with respect to x_index."""
        acc: dict = {}
        for mono, coeff in self._terms.items():
            for pos, (i, e) in enumerate(mono):
                if i == index:
                    rest = mono[:pos] + ((i, e - 1),) if e > 1 else mono[:pos]
                    rest = rest + mono[pos + 1:]
                    _merge(acc, tuple(sorted(rest)), coeff * e)
                    break
        return Expr(acc)

    # -- evaluation ---------------------------------------------------

    def eval(self, point: Sequence):
        """Evaluate at a point (index i reads point[i-1]).

        Fraction/int coordinates give an exact Fraction; float coordinates
        give a float.
        """
        exact = all(isinstance(v, (int, Fraction)) for v in point)
        if exact:
            total = Fraction(0)
            for mono, coeff in self._terms.items():
                term = coeff
                for i, e in mono:
                    term *= Fraction(point[i - 1]) ** e
                total += term
            return total
        total = 0.0
        for mono, coeff in self._terms.items():
            term = float(coeff)
            for i, e in mono:
                term *= float(point[i - 1]) ** e
            total += term
        return total

    def eval_batch(self, points: np.ndarray) -> np.ndarray:
        """Evaluate on an (..., n) float array.  Slow reference path."""
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[:-1])
        for mono, coeff in self._terms.items():
            term = np.full(points.shape[:-1], float(coeff))
            for i, e in mono:
                term = term * points[..., i - 1] ** e
            out += term
        return out

    # -- substitution -------------------------------------------------

    def subs(self, assignment: Mapping[int, "Expr"]) -> "Expr":
        """Substitute expressions for variables (missing indices unchanged)."""
        out = Expr()
        for mono, coeff in self._terms.items():
            term = Expr.constant(coeff)
            for i, e in mono:
                rep = assignment.get(i)
                base = rep if rep is not None else Expr.var(i)
                term = term * base ** e
            out = out + term
        return out

    def shift(self, offsets: Sequence) -> "Expr":
        """Compose with x_i -> x_i + offsets[i-1]."""
        assignment = {
            i + 1: Expr.var(i + 1) + Expr.constant(off)
            for i, off in enumerate(offsets)
            if as_fraction(off) != 0
        }
        return self.subs(assignment) if assignment else self

    # -- graded structure ----------------------------------------------

    def weighted_order(self, mono: Monomial, weights: Sequence[int]) -> int:
        return sum(e * weights[i - 1] for i, e in mono)

    def min_weighted_order(self, weights: Sequence[int]):
        """Smallest weighted order among terms; None for the zero polynomial."""
        if not self._terms:
            return None
        return min(self.weighted_order(m, weights) for m in self._terms)

    def select_weighted_order(self, weights: Sequence[int], order: int) -> "Expr":
        """Keep exactly the terms of the given weighted order."""
        kept = {
            m: c
            for m, c in self._terms.items()
            if self.weighted_order(m, weights) == order
        }
        return Expr(kept)

    def truncate_total_degree(self, degree: int) -> "Expr":
        kept = {m: c for m, c in self._terms.items() if sum(e for _, e in m) <= degree}
        return Expr(kept)

    # -- identity ------------------------------------------------------

    def sort_key(self):
        return tuple((_mono_key(m), c) for m, c in self.terms())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Expr):
            try:
                other = _coerce(other)
            except TypeError:
                return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    # -- printing -------------------------------------------------------

    def to_source(self) -> str:
        """Render in the structure-file expression syntax (re-parseable)."""
        if not self._terms:
            return "0"
        parts = []
        ordered = sorted(
            self._terms.items(),
            key=lambda kv: (-sum(e for _, e in kv[0]), _mono_key(kv[0])),
        )
        for mono, coeff in ordered:
            factors = []
            abscoeff = abs(coeff)
            if abscoeff != 1 or not mono:
                factors.append(str(abscoeff))
            for i, e in mono:
                factors.append(f"x{i}" if e == 1 else f"x{i}^{e}")
            text = "*".join(factors)
            if not parts:
                parts.append(text if coeff > 0 else f"-{text}")
            else:
                parts.append(f"+ {text}" if coeff > 0 else f"- {text}")
        return " ".join(parts)

    def __repr__(self):
        return f"Expr({self.to_source()})"


Expr.zero = Expr()
Expr.one = Expr({(): Fraction(1)})


def _coerce(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Expr.constant(value)


def _mono_key(mono: Monomial):
    return (sum(e for _, e in mono), mono)


def _mono_mul(m1: Monomial, m2: Monomial) -> Monomial:
    if not m1:
        return m2
    if not m2:
        return m1
    acc = dict(m1)
    for i, e in m2:
        acc[i] = acc.get(i, 0) + e
    return tuple(sorted(acc.items()))
