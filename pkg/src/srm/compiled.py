"""Vectorized numpy evaluators generated from polynomial fields.

The distance solver integrates control systems over batches of thousands
of trajectories; evaluating Expr term dictionaries per point would
dominate the runtime.  Instead each generating family is compiled once
into numpy source (only nonzero entries emitted) for the field matrix G,
the control-contracted Jacobian, and the volume density.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .expr import Expr
from .vf import VectorField


def _poly_source(expr: Expr) -> str:
    """Numpy expression string over preloaded locals x1, x2, ..."""
    if expr.is_zero:
        return "0.0"
    parts = []
    for mono, coeff in expr.terms():
        factors = [repr(float(coeff))]
        for i, e in mono:
            factors.append(f"x{i}" if e == 1 else f"x{i}**{e}")
        parts.append("*".join(factors))
    return " + ".join(parts)


def _compile_source(name: str, source: str):
    namespace = {"np": np}
    exec(compile(source, f"<srm:{name}>", "exec"), namespace)
    return namespace[name]


class CompiledSystem:
    """Fast evaluators for one generating family plus volume density."""

    def __init__(self, fields: Sequence[VectorField], density: Expr | None = None):
        fields = tuple(fields)
        if not fields:
            raise ValueError("empty generating family")
        self.dim = fields[0].dim
        self.m = len(fields)
        self.fields = fields
        self.density = density if density is not None else Expr.one
        self._G = self._build_G()
        self._JU = self._build_JU()
        self._dens = self._build_density()

    # G(X): (..., n, m) matrix of field columns
    def _build_G(self):
        n, m = self.dim, self.m
        lines = ["def _G(X):"]
        for i in range(1, n + 1):
            lines.append(f"    x{i} = X[..., {i - 1}]")
        lines.append(f"    out = np.zeros(X.shape[:-1] + ({n}, {m}))")
        for col, field in enumerate(self.fields):
            for row, comp in enumerate(field.components):
                if not comp.is_zero:
                    lines.append(
                        f"    out[..., {row}, {col}] = {_poly_source(comp)}"
                    )
        lines.append("    return out")
        return _compile_source("_G", "\n".join(lines))

    # JU(X, U): (..., n, n) with entry [k, l] = d(sum_i u_i X_i^k)/d x_{l+1}
    def _build_JU(self):
        n = self.dim
        lines = ["def _JU(X, U):"]
        for i in range(1, n + 1):
            lines.append(f"    x{i} = X[..., {i - 1}]")
        for i in range(self.m):
            lines.append(f"    u{i} = U[..., {i}]")
        lines.append(f"    out = np.zeros(X.shape[:-1] + ({n}, {n}))")
        for k in range(n):
            for l in range(n):
                pieces = []
                for i, field in enumerate(self.fields):
                    d = field.components[k].diff(l + 1)
                    if not d.is_zero:
                        pieces.append(f"u{i}*({_poly_source(d)})")
                if pieces:
                    lines.append(f"    out[..., {k}, {l}] = " + " + ".join(pieces))
        lines.append("    return out")
        return _compile_source("_JU", "\n".join(lines))

    def _build_density(self):
        n = self.dim
        lines = ["def _dens(X):"]
        for i in range(1, n + 1):
            lines.append(f"    x{i} = X[..., {i - 1}]")
        lines.append(f"    return ({_poly_source(self.density)}) + np.zeros(X.shape[:-1])")
        return _compile_source("_dens", "\n".join(lines))

    # -- public API -----------------------------------------------------

    @property
    def n(self) -> int:
        return self.dim

    def G(self, X: np.ndarray) -> np.ndarray:
        return self._G(np.asarray(X, dtype=float))

    def F(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Dynamics sum_i u_i X_i(x)."""
        return np.einsum("...nm,...m->...n", self.G(X), U)

    def JU(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return self._JU(np.asarray(X, dtype=float), np.asarray(U, dtype=float))

    def density_at(self, X: np.ndarray) -> np.ndarray:
        return self._dens(np.asarray(X, dtype=float))

    def covector_controls(self, X: np.ndarray, Lam: np.ndarray) -> np.ndarray:
        """u_i = <lam, X_i(x)>, the normal-extremal feedback."""
        return np.einsum("...nm,...n->...m", self.G(X), Lam)

    def frobenius_bound(self, box: Sequence[tuple[float, float]]) -> float:
        """Certified sup over the box of ||G||_F, hence of the top
        singular value; |u|=1 paths move at Euclidean speed <= this."""
        total = 0.0
        for field in self.fields:
            for comp in field.components:
                total += _comp_bound(comp, box) ** 2
        return float(np.sqrt(total))

    def row_bounds(self, box: Sequence[tuple[float, float]]) -> np.ndarray:
        """Certified sups of per-coordinate speeds over the box.

        Entry k bounds |d/dt x_k| for any |u|=1 horizontal path inside
        the box, so d(p, q) >= |p_k - q_k| / row_bounds()[k] whenever a
        minimizer stays in the box; zero entries mark frozen coordinates.
        """
        out = np.zeros(self.dim)
        for field in self.fields:
            for k, comp in enumerate(field.components):
                out[k] += _comp_bound(comp, box) ** 2
        return np.sqrt(out)


def _comp_bound(comp, box) -> float:
    """Interval bound on |component| from its monomial expansion."""
    bound = 0.0
    for mono, coeff in comp.terms():
        term = abs(float(coeff))
        for i, e in mono:
            lo, hi = box[i - 1]
            term *= max(abs(lo), abs(hi)) ** e
        bound += term
    return bound


_CACHE: dict = {}


def compile_system(fields: Sequence[VectorField], density: Expr | None = None) -> CompiledSystem:
    key = (tuple(fields), density)
    got = _CACHE.get(key)
    if got is None:
        got = CompiledSystem(fields, density)
        _CACHE[key] = got
    return got
