"""Privileged coordinates, weighted truncation, anisotropic dilations."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import factorial
from types import SimpleNamespace

import numpy as np

from . import exactla
from .errors import ChartDegenerate, NotBracketGenerating, TruncationNotGenerating
from .expr import Expr
from .flag import FlagData, flag_at
from .frames import AdaptedFrame, adapted_frames
from .vf import VectorField


def dilate(x, lam, weights):
    """Anisotropic dilation: multiply coordinate i by lam**w_i."""
    x = np.asarray(x)
    if x.dtype == object:
        return np.array([c * Fraction(lam) ** w for c, w in zip(x, weights)],
                        dtype=object)
    scale = np.array([float(lam) ** w for w in weights])
    return x * scale


@dataclass(frozen=True)
class Chart:
    """Polynomial privileged chart centered at p.

    to_chart sends ambient points to chart coordinates (p goes to 0) and
    from_chart inverts it; both are exact on rational input.  A holds the
    frame values as columns, so the frame pushes forward to the coordinate
    vector fields at 0.
    """

    point: tuple
    A: tuple[tuple[Fraction, ...], ...]       # rows of the n x n matrix
    A_inv: tuple[tuple[Fraction, ...], ...]
    weights: tuple[int, ...]
    # second-kind corrections; None for a plain affine chart
    poly_fwd: tuple[Expr, ...] | None = None  # chart coords of an offset
    poly_inv: tuple[Expr, ...] | None = None  # offset from chart coords

    @property
    def dim(self) -> int:
        return len(self.weights)

    @property
    def affine(self) -> bool:
        return self.poly_fwd is None

    def det_A(self) -> Fraction:
        return exactla.det([list(r) for r in self.A])

    def to_chart(self, q) -> tuple:
        off = [Fraction(c) - Fraction(pc) for c, pc in zip(q, self.point)]
        if self.affine:
            return tuple(exactla.matvec([list(r) for r in self.A_inv], off))
        assignment = {i + 1: Expr.constant(v) for i, v in enumerate(off)}
        return tuple(e.subs(assignment).constant_value() for e in self.poly_fwd)

    def from_chart(self, x) -> tuple:
        x = [Fraction(c) for c in x]
        if self.affine:
            off = exactla.matvec([list(r) for r in self.A], x)
        else:
            assignment = {i + 1: Expr.constant(v) for i, v in enumerate(x)}
            off = [e.subs(assignment).constant_value() for e in self.poly_inv]
        return tuple(Fraction(pc) + o for pc, o in zip(self.point, off))

    def to_chart_batch(self, Q: np.ndarray) -> np.ndarray:
        Q = np.asarray(Q, dtype=float)
        off = Q - np.array([float(c) for c in self.point])
        if self.affine:
            Ainv = np.array([[float(c) for c in r] for r in self.A_inv])
            return off @ Ainv.T
        out = np.empty_like(off)
        for k, e in enumerate(self.poly_fwd):
            out[..., k] = e.eval_batch(off)
        return out

    def from_chart_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        p = np.array([float(c) for c in self.point])
        if self.affine:
            A = np.array([[float(c) for c in r] for r in self.A])
            return p + X @ A.T
        out = np.empty_like(X)
        for k, e in enumerate(self.poly_inv):
            out[..., k] = e.eval_batch(X)
        return p + out


@dataclass(frozen=True)
class NilpotentApprox:
    """Weighted-homogeneous truncation of the structure at a point."""

    point: tuple
    chart: Chart
    weights: tuple[int, ...]
    growth: tuple[int, ...]
    Q: int
    fields: tuple[VectorField, ...]
    # constant chart density: ambient density at p times |det A|, so that
    # the blow-up measure is volume_factor times Lebesgue in chart coords
    volume_factor: Fraction

    @property
    def dim(self) -> int:
        return len(self.weights)

    @property
    def m(self) -> int:
        return len(self.fields)

    def dilate(self, x, lam):
        return dilate(x, lam, self.weights)

    def is_weighted_homogeneous(self) -> bool:
        return is_weighted_homogeneous(self.fields, self.weights)

    def as_structure(self, halfwidth: float = 8.0):
        """View as a structure on a centered box, for the metric engines."""
        from .structure import SRStructure

        h = Fraction(halfwidth)
        return SRStructure(
            name="nilpotent",
            dim=self.dim,
            field_names=tuple(f"Xh{i+1}" for i in range(self.m)),
            fields=self.fields,
            volume=Expr.one,
            box=tuple((-h ** w, h ** w) for w in self.weights),
            probe=tuple(Fraction(0) for _ in range(self.dim)),
        )


def is_weighted_homogeneous(fields, weights) -> bool:
    """Each component k is zero or weighted-homogeneous of order w_k - 1."""
    for f in fields:
        for k, comp in enumerate(f.components):
            for mono, _ in comp.terms():
                if comp.weighted_order(mono, weights) != weights[k] - 1:
                    return False
    return True


def _pushforward_affine(S, chart: Chart) -> tuple[VectorField, ...]:
    n = S.dim
    # substitution q = p + A x as Exprs
    subs_map = {}
    for row in range(n):
        e = Expr.constant(chart.point[row])
        for col in range(n):
            if chart.A[row][col] != 0:
                e = e + Expr.var(col + 1) * Expr.constant(chart.A[row][col])
        subs_map[row + 1] = e
    out = []
    for f in S.fields:
        comps_at = [c.subs(subs_map) for c in f.components]
        new = []
        for row in range(n):
            e = Expr.zero
            for col in range(n):
                a = chart.A_inv[row][col]
                if a != 0:
                    e = e + comps_at[col] * Expr.constant(a)
            new.append(e)
        out.append(VectorField(n, tuple(new)))
    return tuple(out)


def _derivation_powers(field: VectorField, order: int) -> list[tuple[Expr, ...]]:
    """Iterated directional derivatives of the coordinate functions."""
    n = field.dim
    rows = [tuple(Expr.var(k + 1) for k in range(n))]
    for _ in range(order):
        prev = rows[-1]
        nxt = []
        for e in prev:
            acc = Expr.zero
            for j in range(n):
                acc = acc + e.diff(j + 1) * field.components[j]
            nxt.append(acc)
        rows.append(tuple(nxt))
    return rows


def _second_kind_map(p, frame: AdaptedFrame, order, D: int) -> tuple[Expr, ...]:
    """Offset of the composed flows from p, as degree-D jets in y.

    order lists frame indices from innermost flow to outermost.
    """
    n = frame.dim
    current = tuple(Expr.constant(Fraction(c)) for c in p)
    for j in order:
        field = frame.fields[j]
        powers = _derivation_powers(field, D)
        assignment = {k + 1: current[k] for k in range(n)}
        t = Expr.var(j + 1)
        comps = []
        for k in range(n):
            acc = Expr.zero
            tp = Expr.one
            for i in range(D + 1):
                coef = Fraction(1, factorial(i))
                term = powers[i][k].subs(assignment) * tp * Expr.constant(coef)
                acc = acc + term
                tp = (tp * t).truncate_total_degree(D)
            comps.append(acc.truncate_total_degree(D))
        current = tuple(comps)
    return tuple(c - Expr.constant(Fraction(pc)) for c, pc in zip(current, p))


def _jet_inverse(phi: tuple[Expr, ...], A_inv, D: int) -> tuple[Expr, ...]:
    """psi with phi(psi(v)) = v up to total degree D."""
    n = len(phi)

    def ainv_times(vec: list[Expr]) -> list[Expr]:
        out = []
        for row in range(n):
            e = Expr.zero
            for col in range(n):
                a = A_inv[row][col]
                if a != 0:
                    e = e + vec[col] * Expr.constant(a)
            out.append(e)
        return out

    psi = ainv_times([Expr.var(k + 1) for k in range(n)])
    for _ in range(max(D - 1, 1)):
        assignment = {k + 1: psi[k] for k in range(n)}
        resid = [Expr.var(k + 1) - phi[k].subs(assignment).truncate_total_degree(D)
                 for k in range(n)]
        corr = ainv_times(resid)
        psi = [(a + b).truncate_total_degree(D) for a, b in zip(psi, corr)]
    return tuple(psi)


def _pushforward_poly(S, chart: Chart, D: int) -> tuple[VectorField, ...]:
    n = S.dim
    phi_abs = {k + 1: chart.poly_inv[k] + Expr.constant(chart.point[k])
               for k in range(n)}
    jac_psi = [[chart.poly_fwd[r].diff(c + 1) for c in range(n)] for r in range(n)]
    out = []
    for f in S.fields:
        comps_at = [c.subs(phi_abs).truncate_total_degree(D) for c in f.components]
        new = []
        for r in range(n):
            e = Expr.zero
            for c in range(n):
                # dpsi_r/dv_c evaluated at phi(x): v is the ambient offset,
                # and psi is a polynomial in v, so substitute v -> poly_inv
                d = jac_psi[r][c].subs({k + 1: chart.poly_inv[k] for k in range(n)})
                e = e + (d.truncate_total_degree(D) * comps_at[c])
            new.append(e.truncate_total_degree(D))
        out.append(VectorField(n, tuple(new)))
    return tuple(out)


def _truncate_fields(fields, weights) -> tuple[VectorField, ...]:
    out = []
    for f in fields:
        comps = tuple(c.select_weighted_order(weights, weights[k] - 1)
                      for k, c in enumerate(f.components))
        out.append(VectorField(f.dim, comps))
    return tuple(out)


def _audit(fields_chart, weights, growth) -> tuple[bool, tuple[VectorField, ...] | None]:
    """Privileged-chart test: no low-order terms, truncation regenerates."""
    n = len(weights)
    for f in fields_chart:
        for k, comp in enumerate(f.components):
            if not comp.is_zero and comp.min_weighted_order(weights) < weights[k] - 1:
                return False, None
    hat = _truncate_fields(fields_chart, weights)
    shim = SimpleNamespace(dim=n, fields=hat)
    origin = tuple(Fraction(0) for _ in range(n))
    try:
        fl = flag_at(shim, origin, depth_cap=max(weights) + 1)
    except NotBracketGenerating:
        return False, None
    if fl.growth != tuple(growth):
        return False, None
    return True, hat


def privileged_chart(S, p, frame: AdaptedFrame, flag: FlagData) -> Chart:
    """Privileged coordinates at p for the given adapted frame.

    The affine chart through the frame matrix is tried first; when the
    truncation audit rejects it, canonical coordinates of the second kind
    along the frame flows are built (either nesting order), always
    certified by the same audit.
    """
    n = S.dim
    if not frame.exact:
        raise ChartDegenerate("chart construction needs exact rational data")
    A_rows = [[Fraction(frame.values[j][k]) for j in range(n)] for k in range(n)]
    try:
        A_inv_rows = exactla.inverse(A_rows)
    except ValueError:
        raise ChartDegenerate(f"frame values at {p} are numerically dependent")
    A = tuple(tuple(r) for r in A_rows)
    A_inv = tuple(tuple(r) for r in A_inv_rows)
    p_exact = tuple(Fraction(c) for c in p)

    chart = Chart(point=p_exact, A=A, A_inv=A_inv, weights=flag.weights)
    ok, _ = _audit(_pushforward_affine(S, chart), flag.weights, flag.growth)
    if ok:
        return chart

    D = max(flag.weights)
    for order in (range(n - 1, -1, -1), range(n)):
        phi = _second_kind_map(p_exact, frame, list(order), D)
        psi = _jet_inverse(phi, A_inv_rows, D)
        cand = Chart(point=p_exact, A=A, A_inv=A_inv, weights=flag.weights,
                     poly_fwd=psi, poly_inv=phi)
        ok, _ = _audit(_pushforward_poly(S, cand, D), flag.weights, flag.growth)
        if ok:
            return cand
    raise ChartDegenerate(f"no privileged chart certified at {p}")


def nilpotentize(S, p, chart: Chart | None = None, flag: FlagData | None = None,
                 frame: AdaptedFrame | None = None) -> NilpotentApprox:
    """Weighted truncation of the structure in a privileged chart at p."""
    # floats are exact dyadic rationals, so the chart stays exact
    p = tuple(Fraction(c) for c in p)
    if flag is None:
        flag = flag_at(S, p)
    if chart is None:
        if frame is None:
            frame = adapted_frames(S, p, flag)[0]
        chart = privileged_chart(S, p, frame, flag)
    if chart.affine:
        pushed = _pushforward_affine(S, chart)
    else:
        pushed = _pushforward_poly(S, chart, max(flag.weights))
    ok, hat = _audit(pushed, chart.weights, flag.growth)
    if not ok:
        raise TruncationNotGenerating(
            f"chart at {p} is not privileged: truncated family does not "
            f"reproduce growth {flag.growth}")
    dens0 = S.volume.eval(tuple(Fraction(c) for c in p))
    return NilpotentApprox(
        point=tuple(Fraction(c) for c in p),
        chart=chart,
        weights=chart.weights,
        growth=flag.growth,
        Q=flag.Q,
        fields=hat,
        volume_factor=abs(dens0 * chart.det_A()),
    )
