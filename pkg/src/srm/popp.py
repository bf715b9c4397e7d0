"""Popp measures: graded inner products, densities and strata integrals.

Conventions used throughout (and pinned by the tests):

* graded_ip pushes the Euclidean product on generator words of length i
  through word -> bracket value mod lower level, so the level Gram is
  (P P^T)^{-1} with P the matrix of that map in the recorded quotient
  basis.  All m^i words enter, including repeats of the same field value.
* popp_density works with the deduplicated word list the flag machinery
  keeps (zero fields and sign duplicates dropped once, globally).  Per
  level j it collects the frame coordinates of every kept length-j value
  into B_j = sum c c^T and returns 1/(|omega(Y)| sqrt(prod det B_j)).
  The value is frame independent; tests check this exactly through the
  rational square of the density.

Rational points keep every rank, determinant and solve exact, so the
densities carry an exact squared value next to the float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import exactla
from .errors import NotEquisingular, SingularQuotient, SRMError, StrataNotPartition
from .expr import Expr
from .flag import FlagData, classify_grid, flag_at, word_str
from .frames import AdaptedFrame, adapted_frames, nu
from .rng import stream
from .structure import SRStructure, Stratum
from .vf import VectorField, lie_bracket

_TENSOR_CACHE: dict = {}


def _tensor_words(fields: tuple[VectorField, ...], depth: int):
    """All m^i left-nested words per length 1..depth with symbolic values."""
    key = (tuple(fields), depth)
    if key in _TENSOR_CACHE:
        return _TENSOR_CACHE[key]
    m = len(fields)
    levels = [[((j,), fields[j]) for j in range(m)]]
    for _ in range(2, depth + 1):
        cur = []
        for j in range(m):
            for w, f in levels[-1]:
                cur.append(((j,) + w, lie_bracket(fields[j], f)))
        levels.append(cur)
    _TENSOR_CACHE[key] = levels
    return levels


def _is_rational_point(p) -> bool:
    return all(isinstance(c, (int, Fraction)) for c in p)


def _spanning_values(flag: FlagData, S: SRStructure, p, upto: int):
    """Values of the flag's spanning words for levels 1..upto, as rows."""
    exact = _is_rational_point(p)
    pt = tuple(Fraction(c) for c in p) if exact else tuple(float(c) for c in p)
    rows = []
    for lvl in flag.spanning[:upto]:
        for _, f in lvl:
            v = f.eval(pt) if exact else tuple(float(c) for c in f.eval(pt))
            rows.append(list(v))
    return rows, exact


def _rank(rows, exact: bool, tol: float) -> int:
    if not rows:
        return 0
    if exact:
        return exactla.rank(rows)
    a = np.array([[float(c) for c in r] for r in rows], dtype=float)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def _solve_in_basis(columns, vec, exact: bool):
    """Coefficients of vec in the given full basis (columns)."""
    if exact:
        mat = exactla.transpose(columns)
        return exactla.matvec(exactla.inverse(mat), vec)
    a = np.array(columns, dtype=float).T
    return list(np.linalg.solve(a, np.array(vec, dtype=float)))


def _complete_basis(columns, n: int, exact: bool, tol: float):
    """Extend the independent columns to a basis with coordinate vectors."""
    out = [list(c) for c in columns]
    for j in range(n):
        if len(out) == n:
            break
        e = [Fraction(int(i == j)) if exact else float(i == j) for i in range(n)]
        if _rank(out + [e], exact, tol) > len(out):
            out.append(e)
    assert len(out) == n
    return out


@dataclass(frozen=True)
class GradedInnerProduct:
    """Level Grams of the graded inner product at a point.

    grams[i-1] is the level-i Gram in level_bases[i-1]; the basis is the
    coordinate vectors whose classes span the quotient when that works,
    otherwise the flag's own spanning bracket values (basis_kinds says
    which).  Entries are Fractions at rational points.
    """

    point: tuple
    growth: tuple[int, ...]
    level_bases: tuple
    basis_kinds: tuple[str, ...]
    grams: tuple
    exact: bool

    def gram_float(self, level: int) -> np.ndarray:
        g = self.grams[level - 1]
        return np.array([[float(v) for v in row] for row in g], dtype=float)


def graded_ip(S: SRStructure, p, flag: FlagData | None = None,
              tol: float = 1e-9) -> GradedInnerProduct:
    """Pushforward inner product on each flag quotient at p."""
    if flag is None:
        flag = flag_at(S, p, tol=tol)
    n = S.dim
    exact = _is_rational_point(p)
    pt = tuple(Fraction(c) for c in p) if exact else tuple(float(c) for c in p)
    zero = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0
    words = _tensor_words(S.fields, flag.step)

    level_bases = []
    basis_kinds = []
    grams = []
    prev = 0
    for i in range(1, flag.step + 1):
        k_i = flag.growth[i - 1] - prev
        lower, _ = _spanning_values(flag, S, p, i - 1)
        upper, _ = _spanning_values(flag, S, p, i)
        if k_i == 0:
            level_bases.append(())
            basis_kinds.append("coordinate")
            grams.append(())
            prev = flag.growth[i - 1]
            continue

        # prefer coordinate vectors lying in D^i and independent mod D^{i-1}
        basis = []
        for j in range(n):
            e = [one if l == j else zero for l in range(n)]
            if _rank(upper + [e], exact, tol) > flag.growth[i - 1]:
                continue  # not in D^i
            if _rank(lower + basis + [e], exact, tol) > prev + len(basis):
                basis.append(e)
            if len(basis) == k_i:
                break
        if len(basis) == k_i:
            kind = "coordinate"
        else:
            kind = "bracket"
            basis = [list(f.eval(pt)) if exact
                     else [float(c) for c in f.eval(pt)]
                     for _, f in flag.spanning[i - 1]]

        full = _complete_basis(lower + basis, n, exact, tol)
        cols = []
        for _, f in words[i - 1]:
            v = f.eval(pt) if exact else tuple(float(c) for c in f.eval(pt))
            coef = _solve_in_basis(full, list(v), exact)
            tail = coef[prev + k_i:]
            if exact:
                assert all(t == 0 for t in tail)
            cols.append(coef[prev:prev + k_i])

        # A = P P^T over all words of length i
        a = [[sum((c[r] * c[s] for c in cols), zero) for s in range(k_i)]
             for r in range(k_i)]
        if exact:
            if exactla.det(a) == 0:
                raise SingularQuotient(
                    f"level {i} word map at {p} is not surjective")
            gram = exactla.inverse(a)
        else:
            am = np.array(a, dtype=float)
            if abs(np.linalg.det(am)) < tol:
                raise SingularQuotient(
                    f"level {i} word map at {p} is not surjective")
            gram = [list(row) for row in np.linalg.inv(am)]
        level_bases.append(tuple(tuple(b) for b in basis))
        basis_kinds.append(kind)
        grams.append(tuple(tuple(row) for row in gram))
        prev = flag.growth[i - 1]

    return GradedInnerProduct(
        point=pt, growth=flag.growth, level_bases=tuple(level_bases),
        basis_kinds=tuple(basis_kinds), grams=tuple(grams), exact=exact)


@dataclass(frozen=True)
class PoppDensity:
    """Popp density dP/dmu at a point, with the per-level determinants."""

    point: tuple
    value: float
    value_sq: Fraction | None  # exact square at rational points
    det_B: tuple
    omega: object
    frame_words: tuple[str, ...]
    exact: bool


def _frame_solver(frame: AdaptedFrame, tol: float = 1e-9):
    """Returns coords(v) giving frame coefficients of an ambient vector."""
    if frame.exact:
        inv = exactla.inverse(exactla.transpose(frame.matrix()))
        return lambda v: exactla.matvec(inv, list(v))
    a = frame.matrix_float().T
    return lambda v: list(np.linalg.solve(a, np.array(v, dtype=float)))


def _level_bs(S: SRStructure, p, flag: FlagData, frame: AdaptedFrame):
    """Per-level matrices B_j = sum of c c^T over kept length-j words."""
    exact = frame.exact
    pt = tuple(Fraction(c) for c in p) if exact else tuple(float(c) for c in p)
    zero = Fraction(0) if exact else 0.0
    coords = _frame_solver(frame)
    bs = []
    for j in range(1, flag.step + 1):
        lo, hi = frame.level_block(j)
        k_j = hi - lo
        blocks = []
        for _, f, _ in flag.levels[j - 1]:
            v = f.eval(pt) if exact else [float(c) for c in f.eval(pt)]
            c = coords(v)
            blocks.append(c[lo:hi])
        b = [[sum((c[r] * c[s] for c in blocks), zero) for s in range(k_j)]
             for r in range(k_j)]
        bs.append(b)
    return bs


def popp_density(S: SRStructure, p, frame: AdaptedFrame | None = None,
                 flag: FlagData | None = None, volume: Expr | None = None,
                 tol: float = 1e-9) -> PoppDensity:
    """Density of the Popp measure against the declared volume at p."""
    if flag is None:
        flag = flag_at(S, p, tol=tol)
    if frame is None:
        frame = adapted_frames(S, p, flag, tol=tol)[0]
    vol = S.volume if volume is None else volume
    exact = frame.exact
    pt = tuple(Fraction(c) for c in p) if exact else tuple(float(c) for c in p)

    bs = _level_bs(S, p, flag, frame)
    dets = []
    for j, b in enumerate(bs, start=1):
        d = exactla.det(b) if exact else float(np.linalg.det(np.array(b)))
        if (d == 0) if exact else (abs(d) < tol):
            raise SingularQuotient(f"level {j} block degenerate at {p}")
        dets.append(d)

    if exact:
        h = vol.eval(pt)
        omega = h * exactla.det(frame.matrix())
        prod = Fraction(1)
        for d in dets:
            prod *= d
        value_sq = 1 / (omega * omega * prod)
        value = 1.0 / (abs(float(omega)) * math.sqrt(float(prod)))
    else:
        h = float(vol.eval_batch(np.array([pt], dtype=float))[0])
        omega = h * float(np.linalg.det(frame.matrix_float()))
        prod = 1.0
        for d in dets:
            prod *= d
        value_sq = None
        value = 1.0 / (abs(omega) * math.sqrt(prod))

    return PoppDensity(
        point=pt, value=value, value_sq=value_sq,
        det_B=tuple(dets), omega=omega,
        frame_words=tuple(word_str(w) for w in frame.words),
        exact=exact)


@dataclass(frozen=True)
class WeakEquivalenceReport:
    """Grid check of 1/(C nu) <= dP/dmu <= C/nu on regular points."""

    C: float
    ratio_min: float
    ratio_max: float
    n_regular: int
    n_singular: int


def weak_equivalent_check(S: SRStructure, counts=None, tol: float = 1e-9,
                          seed: int = 0) -> WeakEquivalenceReport:
    """Smallest C with nu-weak equivalence of Popp over a regular grid."""
    if counts is None:
        counts = (7,) * S.dim
    classes = classify_grid(S, counts, tol=tol, seed=seed)
    ratios = []
    n_sing = 0
    for q, (cls, flag) in classes.items():
        if cls != "regular":
            n_sing += 1
            continue
        frames = adapted_frames(S, q, flag, tol=tol)
        dens = popp_density(S, q, frame=frames[0], flag=flag, tol=tol)
        ratios.append(nu(S, q, frames) * dens.value)
    if not ratios:
        raise SRMError("no regular grid points to check")
    r = np.array(ratios)
    c = float(max(r.max(), (1.0 / r).max()))
    return WeakEquivalenceReport(
        C=c, ratio_min=float(r.min()), ratio_max=float(r.max()),
        n_regular=len(ratios), n_singular=n_sing)


@dataclass(frozen=True)
class EquisingularReport:
    """Constant ambient growth and tangency dimensions along a stratum."""

    stratum: str
    growth: tuple[int, ...]
    nN: tuple[int, ...]
    Q_N: int
    samples: int


def _tangency_dims(S: SRStructure, stratum: Stratum, params,
                   tol: float = 1e-9):
    """Ambient growth and n^N_i = dim(D^i cap TN) at map(params), exact."""
    theta = tuple(Fraction(t) for t in params)
    q = stratum.point(theta)
    flag = flag_at(S, q, tol=tol)
    jac = stratum.jacobian_at(theta)  # dim x k
    jt = exactla.transpose(jac)       # k rows of length dim
    rank_t = exactla.rank(jt)
    if rank_t != stratum.k:
        raise NotEquisingular(
            f"stratum {stratum.name}: map is not an immersion at {params}",
            witness=tuple(float(t) for t in theta))
    nn = []
    for i in range(1, flag.step + 1):
        di, _ = _spanning_values(flag, S, q, i)
        r_sum = exactla.rank(di + jt)
        nn.append(flag.growth[i - 1] + rank_t - r_sum)
    return flag.growth, tuple(nn), q


def equisingular_check(S: SRStructure, stratum: Stratum | str,
                       samples: int = 12, seed: int = 0,
                       tol: float = 1e-9) -> EquisingularReport:
    """Verify constant growth and tangency dims along a stratum."""
    if isinstance(stratum, str):
        stratum = S.stratum(stratum)
    center = tuple((a + b) / 2 for a, b in stratum.parambox)
    thetas = [center]
    for row in stratum.sample(samples, seed, "equi"):
        thetas.append(tuple(Fraction(float(t)) for t in row))

    ref = None
    ref_theta = None
    for theta in thetas:
        growth, nn, _ = _tangency_dims(S, stratum, theta, tol=tol)
        if ref is None:
            ref, ref_theta = (growth, nn), theta
        elif (growth, nn) != ref:
            raise NotEquisingular(
                f"stratum {stratum.name}: growth/tangency changes from "
                f"{ref} to {(growth, nn)}",
                witness=(tuple(float(t) for t in ref_theta),
                         tuple(float(t) for t in theta)))
    growth, nn = ref
    q_n = 0
    prev = 0
    for i, v in enumerate(nn, start=1):
        q_n += i * (v - prev)
        prev = v
    assert prev == stratum.k
    return EquisingularReport(
        stratum=stratum.name, growth=growth, nN=nn, Q_N=q_n,
        samples=len(thetas))


@dataclass(frozen=True)
class StratumDensity:
    """Popp density of a stratum against its parameter Lebesgue measure."""

    point: tuple
    params: tuple
    value: float
    value_sq: Fraction | None
    level_dims: tuple[int, ...]


def popp_on_stratum(S: SRStructure, stratum: Stratum | str, params,
                    tol: float = 1e-9) -> StratumDensity:
    """Density of the stratum Popp measure in stratum parameters.

    The intrinsic flag of the stratum is cut out of the ambient one:
    level i is (D^i cap TN)/(D^{i-1} cap TN) with the restricted graded
    inner product, and the value is per unit parameter volume, so it
    already includes the Jacobian of the declared embedding.
    """
    if isinstance(stratum, str):
        stratum = S.stratum(stratum)
    theta = tuple(Fraction(t) for t in params)
    q = stratum.point(theta)
    flag = flag_at(S, q, tol=tol)
    frame = adapted_frames(S, q, flag, tol=tol)[0]
    if not frame.exact:
        raise SRMError("stratum densities need rational parameters")
    k = stratum.k
    jac = stratum.jacobian_at(theta)
    jt = exactla.transpose(jac)
    if exactla.rank(jt) != k:
        raise NotEquisingular(
            f"stratum {stratum.name}: map is not an immersion at {params}",
            witness=tuple(float(t) for t in theta))

    coords = _frame_solver(frame)
    bs = _level_bs(S, q, flag, frame)
    grams = []
    for j, b in enumerate(bs, start=1):
        if exactla.det(b) == 0:
            raise SingularQuotient(f"level {j} block degenerate at {q}")
        grams.append(exactla.inverse(b))

    # adapted basis of TN in parameter coordinates, level by level
    chosen: list[list[Fraction]] = []
    chosen_levels: list[int] = []
    for i in range(1, flag.step + 1):
        di, _ = _spanning_values(flag, S, q, i)
        # parameter vectors b with J b in D^i: nullspace of [D^i | -J]
        mat_cols = di + [[-c for c in col] for col in jt]
        mat = exactla.transpose(mat_cols)
        for vec in exactla.nullspace(mat):
            b_part = vec[len(di):]
            if all(v == 0 for v in b_part):
                continue
            if exactla.rank(chosen + [b_part]) > len(chosen):
                chosen.append(list(b_part))
                chosen_levels.append(i)
        if len(chosen) == k:
            break
    assert len(chosen) == k

    level_dims = tuple(sum(1 for l in chosen_levels if l <= i)
                       for i in range(1, flag.step + 1))

    det_m = exactla.det(exactla.transpose(chosen))
    assert det_m != 0

    # restricted level Grams of the adapted classes
    value_sq = Fraction(1) / (det_m * det_m)
    for i in range(1, flag.step + 1):
        idx = [a for a, l in enumerate(chosen_levels) if l == i]
        if not idx:
            continue
        lo, hi = frame.level_block(i)
        classes = []
        for a in idx:
            v = exactla.matvec(jac, chosen[a])
            c = coords(v)
            assert all(x == 0 for x in c[hi:])
            classes.append(c[lo:hi])
        g = grams[i - 1]
        sub = [[sum((classes[r][s1] * g[s1][s2] * classes[cdx][s2]
                     for s1 in range(len(g)) for s2 in range(len(g))),
                    Fraction(0))
                for cdx in range(len(idx))] for r in range(len(idx))]
        d = exactla.det(sub)
        if d <= 0:
            raise SingularQuotient(
                f"restricted level {i} Gram degenerate on {stratum.name}")
        value_sq *= d

    return StratumDensity(
        point=q, params=theta, value=math.sqrt(float(value_sq)),
        value_sq=value_sq, level_dims=level_dims)


@dataclass(frozen=True)
class StratumMeasure:
    name: str
    k: int
    Q_N: int
    in_top: bool
    value: float  # +inf when flagged divergent
    stderr: float
    divergent: bool
    truncated_estimate: float
    divergence_checked: bool


@dataclass(frozen=True)
class StratifiedReport:
    """Stratumwise Popp masses of a region and the two total measures.

    P1 sums the strata of top intrinsic dimension, P2 the full-dimensional
    (regular) ones; either is +inf when a contribution is flagged
    divergent by the collar decay probe.
    """

    entries: tuple[StratumMeasure, ...]
    dim_H: int
    P1: float
    P2: float
    P1_divergent: bool
    P2_divergent: bool
    miss_fraction: float
    overlap_fraction: float
    coverage_checked: bool


def _identity_components(stratum: Stratum):
    """Per map component: parameter index for bare variables, else None."""
    out = []
    for comp in stratum.map:
        found = None
        for j in range(stratum.k):
            if (comp - Expr.var(j + 1)).is_zero:
                found = j
                break
        out.append(found)
    return out


def _is_identity_chart(stratum: Stratum, n: int) -> bool:
    if stratum.k != n:
        return False
    comps = _identity_components(stratum)
    return comps == list(range(n))


def _narrowed_parambox(stratum: Stratum, region):
    """Parameter box shrunk by region constraints on bare-variable components."""
    lo = [a for a, _ in stratum.parambox]
    hi = [b for _, b in stratum.parambox]
    comps = _identity_components(stratum)
    for r, j in enumerate(comps):
        rl, rh = region[r]
        if j is not None:
            lo[j] = max(lo[j], Fraction(rl))
            hi[j] = min(hi[j], Fraction(rh))
        elif stratum.map[r].is_constant:
            c = stratum.map[r].constant_value()
            if not (Fraction(rl) <= c <= Fraction(rh)):
                return None  # image misses the region entirely
    if any(l > h for l, h in zip(lo, hi)):
        return None
    return list(zip(lo, hi))


def _in_region(points: np.ndarray, region) -> np.ndarray:
    lo = np.array([float(a) for a, _ in region])
    hi = np.array([float(b) for _, b in region])
    return np.all((points >= lo) & (points <= hi), axis=-1)


def _collar_divergence(S: SRStructure, stratum: Stratum, other: Stratum,
                       region, seed: int, tol: float) -> bool:
    """Collar probe: does the stratum density fail to decay toward other?

    Contributions c_l = mean density at distance 2^-l times the collar
    volume scale 2^{-l codim}; the piece is summable iff they decay, so a
    triple-level decay factor above 0.9 flags divergence.
    """
    if not _is_identity_chart(stratum, S.dim):
        return False
    codim = stratum.k - other.k
    if codim <= 0:
        return False
    obox = _narrowed_parambox(other, region)
    if obox is None:
        return False  # the other stratum stays clear of the region
    rng = stream(seed, "collar", stratum.name, other.name)
    near = Stratum(name=other.name, k=other.k, map=other.map,
                   parambox=tuple(obox))
    anchors = near.sample(12, seed, "anchors", stratum.name)
    dirs = rng.normal(size=(len(anchors), S.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    box = _narrowed_parambox(stratum, region)
    if box is None:
        return False
    lo = np.array([float(a) for a, _ in box])
    hi = np.array([float(b) for _, b in box])

    levels = list(range(4, 21))
    contrib = []
    for l in levels:
        vals = []
        for a in range(len(anchors)):
            q = near.points(anchors[a:a + 1])[0] + dirs[a] * 2.0 ** (-l)
            if np.any(q < lo) or np.any(q > hi):
                continue
            theta = tuple(Fraction(float(c)) for c in q)
            try:
                d = popp_on_stratum(S, stratum, theta, tol=tol)
            except SRMError:
                continue
            vals.append(d.value)
        if vals:
            contrib.append(np.mean(vals) * 2.0 ** (-l * codim))
        else:
            contrib.append(0.0)
    head = [c for c in contrib[:6] if c > 0]
    tail = [c for c in contrib[-3:] if c > 0]
    mid = [c for c in contrib[-6:-3] if c > 0]
    if not head or not tail or not mid:
        return False
    decay = (np.prod(tail) ** (1 / len(tail))) / (np.prod(mid) ** (1 / len(mid)))
    return bool(decay >= 0.9)


def stratified_measures(S: SRStructure, region=None, density_samples: int = 400,
                        coverage_samples: int = 4000, seed: int = 0,
                        tol: float = 1e-9) -> StratifiedReport:
    """Stratumwise Popp masses P^N of a box region, and P_1, P_2 totals."""
    n = S.dim
    if region is None:
        region = S.box
    region = tuple((Fraction(a), Fraction(b)) for a, b in region)
    for (a, b), (ba, bb) in zip(region, S.box):
        if a < ba or b > bb or a >= b:
            raise SRMError("region must be a nondegenerate sub-box of the box")

    strata = list(S.strata)
    if not strata:
        strata = [Stratum(name="all", k=n,
                          map=tuple(Expr.var(j + 1) for j in range(n)),
                          parambox=S.box)]

    # coverage: the identity-chart full-dimensional strata must tile the region
    full = [st for st in strata if st.k == n]
    id_full = [st for st in full if _is_identity_chart(st, n)]
    coverage_checked = bool(full) and len(id_full) == len(full)
    miss_frac = 0.0
    overlap_frac = 0.0
    if coverage_checked:
        lo = np.array([float(a) for a, _ in region])
        hi = np.array([float(b) for _, b in region])
        rng = stream(seed, "strat", "coverage", S.name)
        pts = lo + (hi - lo) * rng.random((coverage_samples, n))
        hits = np.zeros(coverage_samples, dtype=int)
        for st in id_full:
            blo = np.array([float(a) for a, _ in st.parambox])
            bhi = np.array([float(b) for _, b in st.parambox])
            inside = np.all((pts > blo) & (pts < bhi), axis=1)
            hits += inside.astype(int)
        miss_frac = float(np.mean(hits == 0))
        overlap_frac = float(np.mean(hits > 1))
        if miss_frac > 0.01:
            raise StrataNotPartition(
                f"{miss_frac:.1%} of the region is covered by no stratum")
        if overlap_frac > 0.01:
            raise StrataNotPartition(
                f"{overlap_frac:.1%} of the region lies in two strata interiors")

    reports = {st.name: equisingular_check(S, st, seed=seed, tol=tol)
               for st in strata}
    dim_h = max(r.Q_N for r in reports.values())

    entries = []
    for st in strata:
        q_n = reports[st.name].Q_N
        box = _narrowed_parambox(st, region)
        if box is None:
            entries.append(StratumMeasure(
                name=st.name, k=st.k, Q_N=q_n, in_top=(q_n == dim_h),
                value=0.0, stderr=0.0, divergent=False,
                truncated_estimate=0.0, divergence_checked=True))
            continue
        vol = 1.0
        for a, b in box:
            vol *= float(b - a)
        lo = np.array([float(a) for a, _ in box])
        hi = np.array([float(b) for _, b in box])
        rng = stream(seed, "strat", "mc", st.name)
        thetas = lo + (hi - lo) * rng.random((density_samples, st.k))
        pts = st.points(thetas)
        inside = _in_region(pts, region)
        vals = np.zeros(density_samples)
        for i in np.nonzero(inside)[0]:
            theta = tuple(Fraction(float(t)) for t in thetas[i])
            vals[i] = popp_on_stratum(S, st, theta, tol=tol).value
        est = vol * float(np.mean(vals))
        se = vol * float(np.std(vals, ddof=1) / math.sqrt(density_samples))

        lower = [o for o in strata if o.k < st.k]
        checked = _is_identity_chart(st, n) or not lower
        divergent = any(_collar_divergence(S, st, o, region, seed, tol)
                        for o in lower)
        entries.append(StratumMeasure(
            name=st.name, k=st.k, Q_N=q_n, in_top=(q_n == dim_h),
            value=(math.inf if divergent else est), stderr=se,
            divergent=divergent, truncated_estimate=est,
            divergence_checked=checked))

    def total(sel):
        parts = [e for e in entries if sel(e)]
        if any(e.divergent for e in parts):
            return math.inf, True
        return float(sum(e.value for e in parts)), False

    p1, p1_div = total(lambda e: e.in_top)
    p2, p2_div = total(lambda e: e.k == n)
    return StratifiedReport(
        entries=tuple(entries), dim_H=dim_h, P1=p1, P2=p2,
        P1_divergent=p1_div, P2_divergent=p2_div,
        miss_fraction=miss_frac, overlap_fraction=overlap_frac,
        coverage_checked=coverage_checked)
