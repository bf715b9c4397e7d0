"""Polynomial vector fields and exact Lie brackets."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .expr import Expr, _coerce


@dataclass(frozen=True)
class VectorField:
    """A vector field on R^dim with polynomial components."""

    dim: int
    components: tuple[Expr, ...]

    def __post_init__(self):
        if len(self.components) != self.dim:
            raise ValueError(
                f"expected {self.dim} components, got {len(self.components)}"
            )
        for comp in self.components:
            if comp.max_var() > self.dim:
                raise ValueError(
                    f"component {comp} uses x{comp.max_var()} beyond dim {self.dim}"
                )

    @staticmethod
    def make(dim: int, components: Sequence) -> "VectorField":
        return VectorField(dim, tuple(_coerce(c) for c in components))

    @staticmethod
    def zero(dim: int) -> "VectorField":
        return VectorField(dim, tuple(Expr.zero for _ in range(dim)))

    @property
    def is_zero(self) -> bool:
        return all(c.is_zero for c in self.components)

    def eval(self, point: Sequence):
        """Exact tuple at rational points, float tuple otherwise."""
        return tuple(c.eval(point) for c in self.components)

    def eval_batch(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[:-1] + (self.dim,))
        for k, comp in enumerate(self.components):
            out[..., k] = comp.eval_batch(points)
        return out

    def jacobian(self) -> tuple[tuple[Expr, ...], ...]:
        """Matrix of partials, entry [k][l] = d(component k)/d(x_{l+1})."""
        return tuple(
            tuple(comp.diff(l + 1) for l in range(self.dim))
            for comp in self.components
        )

    def scale(self, factor) -> "VectorField":
        return VectorField(self.dim, tuple(c.scale(factor) for c in self.components))

    def __add__(self, other: "VectorField") -> "VectorField":
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        return VectorField(
            self.dim, tuple(a + b for a, b in zip(self.components, other.components))
        )

    def __sub__(self, other: "VectorField") -> "VectorField":
        return self + other.scale(-1)

    def subs_components(self, assignment) -> "VectorField":
        return VectorField(self.dim, tuple(c.subs(assignment) for c in self.components))

    def to_source(self) -> str:
        return "(" + ", ".join(c.to_source() for c in self.components) + ")"


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X, Y]^k = sum_j X^j d_j Y^k - Y^j d_j X^k, computed exactly."""
    if X.dim != Y.dim:
        raise ValueError("dimension mismatch")
    comps = []
    for k in range(X.dim):
        acc = Expr.zero
        for j in range(X.dim):
            xj = X.components[j]
            yj = Y.components[j]
            if not xj.is_zero:
                acc = acc + xj * Y.components[k].diff(j + 1)
            if not yj.is_zero:
                acc = acc - yj * X.components[k].diff(j + 1)
        comps.append(acc)
    return VectorField(X.dim, tuple(comps))


def sign_canonical_key(field: VectorField):
    """Hashable key identifying a field up to global sign.

    Used to deduplicate bracket words: a word whose value equals plus or
    minus an earlier one carries no new geometry.
    """
    items = []
    for k, comp in enumerate(field.components):
        for mono, coeff in comp.terms():
            items.append((k, mono, coeff))
    if not items:
        return ("zero",)
    lead = items[0][2]
    sign = 1 if lead > 0 else -1
    return tuple((k, m, c * sign) for k, m, c in items)
