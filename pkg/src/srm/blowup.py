"""Blow-up experiments: dilation distortion and weak measure convergence.

The rescaled measure (pull the measure back through the chart, restrict to
the ball of radius R*eps, dilate by 1/eps, divide by eps^Q) is implemented
by literal cancellation: the Jacobian of the dilation contributes exactly
eps^Q, so the Monte Carlo integrand carries no eps power at all.  Both
sides of every comparison integrate the same sample cloud (common random
numbers), which keeps the difference noise far below either integral's own
error and makes decreasing curves meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distance import ball_membership, batched_distance, pairwise_distance
from .errors import SRMError, ValidationError
from .flag import classify_point, flag_at
from .measures import _bounding_half, _membership_tier, mu_hat_ball
from .nilpotent import NilpotentApprox, nilpotentize
from .rng import stream
from .structure import SRStructure


def _smooth_step(t: np.ndarray, scale: float = 0.05) -> np.ndarray:
    z = np.clip(t / scale, -60.0, 60.0)
    return 1.0 / (1.0 + np.exp(-z))


def dictionary_values(N: NilpotentApprox, Y: np.ndarray,
                      dhat: np.ndarray) -> tuple[list[str], np.ndarray]:
    """Fixed 20-function test dictionary evaluated on the sample cloud.

    Constant, coordinate monomials of weighted degree at most 2, a radial
    bump and smoothed ball indicators in the homogeneous distance, smoothed
    half-space indicators, then low-frequency waves to fill up to 20.
    Points are clipped to [-2, 2]^n first, so escaping samples contribute
    boundary values instead of blowing up.
    """
    n = N.dim
    Yc = np.clip(Y, -2.0, 2.0)
    names: list[str] = ["one"]
    funcs: list[np.ndarray] = [np.ones(Y.shape[0])]
    for k in range(n):
        if N.weights[k] <= 2:
            names.append(f"y{k + 1}")
            funcs.append(Yc[:, k])
    for k in range(n):
        for j in range(k, n):
            if N.weights[k] + N.weights[j] <= 2:
                names.append(f"y{k + 1}y{j + 1}")
                funcs.append(Yc[:, k] * Yc[:, j])
    names.append("bump")
    funcs.append(np.exp(-dhat ** 2))
    names.append("ball1")
    funcs.append(_smooth_step(1.0 - dhat))
    names.append("ball1.5")
    funcs.append(_smooth_step(1.5 - dhat))
    for k in range(n):
        names.append(f"half{k + 1}")
        funcs.append(_smooth_step(Yc[:, k]))
    if n >= 2:
        names.append("quadrant")
        funcs.append(_smooth_step(Yc[:, 0]) * _smooth_step(Yc[:, 1]))
    k = 0
    while len(funcs) < 20:
        idx = k % n
        harmonic = k // (2 * n) + 1
        use_sin = (k // n) % 2 == 1
        wave = np.sin if use_sin else np.cos
        names.append(f"{'sin' if use_sin else 'cos'}{harmonic}_y{idx + 1}")
        funcs.append(wave(0.5 * np.pi * harmonic * Yc[:, idx]))
        k += 1
    return names[:20], np.array(funcs[:20])


def _chart_jac_dets(chart, Xc: np.ndarray) -> np.ndarray:
    """|det of the chart-to-ambient differential| at each chart point."""
    n = chart.dim
    if chart.affine:
        a = np.array([[float(c) for c in r] for r in chart.A])
        return np.full(Xc.shape[0], abs(float(np.linalg.det(a))))
    jac = np.empty((Xc.shape[0], n, n))
    for r in range(n):
        for c in range(n):
            jac[:, r, c] = chart.poly_inv[r].diff(c + 1).eval_batch(Xc)
    return np.abs(np.linalg.det(jac))


@dataclass(frozen=True)
class DistortionResult:
    eps: float
    value: float      # max over sampled pairs of |d/eps - d_hat|
    error: float      # propagated solver error at the maximizing pair
    max_error: float
    pairs: int


def gh_distortion(S: SRStructure, p, R: float, eps: float, pairs: int = 40,
                  budget: int = 1, seed: int = 0,
                  N: NilpotentApprox | None = None) -> DistortionResult:
    """Distortion of the dilation map between the ball B(p, R*eps) and
    the homogeneous ball: max over sampled pairs of |d(x,x')/eps -
    d_hat(y, y')| with y the dilated chart image of x."""
    if N is None:
        N = nilpotentize(S, p)
    flag = flag_at(S, p)
    n = N.dim
    rng = stream(seed, "ghd", eps)
    half = _bounding_half(N, np.zeros(n), 1.1 * R, seed)
    need = 2 * pairs
    Y = (2.0 * rng.random((8 * need, n)) - 1.0) * half
    cls_hat, _ = ball_membership(N, np.zeros(n), 0.95 * R, Y,
                                 seed=seed, **_membership_tier(budget))
    Y = Y[cls_hat == 1]
    Xa = N.chart.from_chart_batch(N.dilate(Y, eps))
    cls_amb, _ = ball_membership(S, np.asarray(p, dtype=float), R * eps, Xa,
                                 seed=seed, **_membership_tier(budget))
    keep = cls_amb == 1
    Y, Xa = Y[keep], Xa[keep]
    if Y.shape[0] < 4:
        raise SRMError(f"too few in-ball pair samples at eps={eps}")
    m = min(pairs, Y.shape[0] // 2)
    ia, ib = np.arange(0, 2 * m, 2), np.arange(1, 2 * m, 2)
    tier = dict(K=20, substeps=2, starts=8)
    damb = pairwise_distance(S, Xa[ia], Xa[ib], flag.weights,
                             budget=max(budget, 1), seed=seed,
                             tag=f"ghda{eps}", **tier)
    dhat = pairwise_distance(N, Y[ia], Y[ib], N.weights,
                             budget=max(budget, 1), seed=seed,
                             tag=f"ghdn{eps}", **tier)
    vals = np.abs(damb.value / eps - dhat.value)
    errs = damb.error / eps + dhat.error
    k = int(np.argmax(vals))
    return DistortionResult(eps=float(eps), value=float(vals[k]),
                            error=float(errs[k]),
                            max_error=float(errs.max()), pairs=m)


@dataclass(frozen=True)
class DiscrepancyResult:
    eps: float
    value: float              # max over the dictionary of |I_eps - I_hat|
    stderr: float             # MC + membership-band error at the maximizer
    worst: str                # dictionary entry attaining the max
    escape_fraction: float    # in-ball samples the 1.2R dilated box misses
    per_function: dict


class _DiscrepancySession:
    """Shared sample cloud and dictionary across one eps schedule."""

    def __init__(self, S, p, R, eps_schedule, kind="smooth", budget=1,
                 seed=0, nsamples=None):
        if nsamples is None:
            nsamples = 3000 * (1 + max(budget, 0))
        cls, flag = classify_point(S, p, seed=seed)
        if kind == "spherical" and cls != "regular":
            raise ValidationError("spherical comparison needs a regular "
                                  "point; the density is formal elsewhere")
        self.S, self.p = S, np.asarray(p, dtype=float)
        self.R, self.kind, self.budget, self.seed = R, kind, budget, seed
        self.flag = flag
        self.N = nilpotentize(S, p)
        n = self.N.dim
        eps_max = max(eps_schedule)

        half = _bounding_half(self.N, np.zeros(n), 1.3 * R, seed)
        tier = _membership_tier(budget)
        for rounds in range(3):
            rng = stream(seed, "blow", nsamples, rounds)
            Y = (2.0 * rng.random((nsamples, n)) - 1.0) * half
            cls2, _ = ball_membership(self.N, np.zeros(n),
                                      [R, 1.2 * R], Y,
                                      seed=seed, **tier)
            Xa = self.N.chart.from_chart_batch(self.N.dilate(Y, eps_max))
            cls_amb, _ = ball_membership(S, self.p, R * eps_max, Xa,
                                         seed=seed, **tier)
            sure = (cls2[0] == 1) | (cls_amb == 1)
            touch = np.any(sure[:, None] & (np.abs(Y) > 0.92 * half),
                           axis=0)
            if not touch.any():
                break
            half = np.where(touch, 1.6 * half, half)
        self.Y, self.boxvol = Y, float(np.prod(2.0 * half))
        self.cls_hat, self.cls_hat_loose = cls2[0], cls2[1]

        dh = batched_distance(self.N, np.zeros(n), Y, weights=self.N.weights,
                              budget=budget, seed=seed, K=10, substeps=1,
                              starts=4, tag="dict")
        self.dhat = dh.value
        self.names, self.H = dictionary_values(self.N, Y, self.dhat)
        self.habs = np.abs(self.H).max(axis=1)

        w_hat = np.where(self.cls_hat == 1, 1.0,
                         np.where(self.cls_hat == 0, 0.5, 0.0))
        self.term_hat = w_hat * float(self.N.volume_factor)
        self.band_hat = float(np.mean(self.cls_hat == 0)) \
            * float(self.N.volume_factor)

        self.sd_model, self.sd_rel_se = None, 0.0
        if kind == "spherical":
            self.sd_model, sd0, sd0_se = _sd_linear_model(
                S, p, 0.25 * R * eps_max, max(budget - 1, 0), seed)
            self.sd_rel_se = sd0_se / sd0
            self.term_hat = self.term_hat * sd0
            self.band_hat *= sd0

    def run(self, eps: float) -> DiscrepancyResult:
        S, N, p = self.S, self.N, self.p
        Xc = N.dilate(self.Y, eps)
        Xa = N.chart.from_chart_batch(Xc)
        cls_amb, _ = ball_membership(S, p, self.R * eps, Xa,
                                     seed=self.seed,
                                     **_membership_tier(self.budget))
        w_amb = np.where(cls_amb == 1, 1.0, np.where(cls_amb == 0, 0.5, 0.0))
        dens = np.abs(S.volume_at(Xa))
        jac = _chart_jac_dets(N.chart, Xc)
        term_amb = w_amb * dens * jac
        band_amb = float(np.mean((cls_amb == 0) * dens * jac))
        if self.sd_model is not None:
            sd_x = self.sd_model(Xa)
            term_amb = term_amb * sd_x
            band_amb *= float(np.abs(sd_x).max())

        diff = self.H * (term_amb - self.term_hat)[None, :]
        vals = self.boxvol * np.abs(diff.mean(axis=1))
        ses = self.boxvol * (diff.std(axis=1, ddof=1)
                             / np.sqrt(self.Y.shape[0])
                             + 0.5 * (band_amb + self.band_hat) * self.habs)
        if self.sd_rel_se:
            # the fitted density's own error shifts both integrals together
            scale_err = self.boxvol * np.abs(
                (self.H * self.term_hat[None, :]).mean(axis=1))
            ses = ses + self.sd_rel_se * scale_err
        k = int(np.argmax(vals))
        amb_in = cls_amb == 1
        esc = (float(np.mean(self.cls_hat_loose[amb_in] == -1))
               if amb_in.any() else 0.0)
        return DiscrepancyResult(
            eps=float(eps), value=float(vals[k]), stderr=float(ses[k]),
            worst=self.names[k], escape_fraction=esc,
            per_function=dict(zip(self.names, map(float, vals))))


def _sd_linear_model(S, p, h: float, budget: int, seed: int):
    """Linear-in-x model of the spherical density fitted near p.

    The density enters the rescaled comparison at every sample point;
    estimating it from scratch per point would cost a full ball-volume MC
    each, so fit an affine model through center + axis offsets instead.
    Returns (model, value at p, stderr at p).
    """
    from fractions import Fraction

    from .measures import spherical_density

    p = np.asarray(p, dtype=float)
    n = p.size
    hq = Fraction(h).limit_denominator(64)
    pts = [tuple(Fraction(c) for c in p)]
    for k in range(n):
        for s in (1, -1):
            q = [Fraction(c) for c in p]
            q[k] += s * hq
            pts.append(tuple(q))
    ests = [spherical_density(S, q, budget=budget, seed=seed) for q in pts]
    vals = np.array([e.value for e in ests])
    A = np.array([[1.0] + [float(q[k]) - p[k] for k in range(n)]
                  for q in pts])
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)

    def model(X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return coef[0] + (X - p) @ coef[1:]

    return model, float(coef[0]), float(ests[0].stderr)


def measure_discrepancy_smooth(S: SRStructure, p, R: float, eps: float,
                               budget: int = 1, seed: int = 0,
                               nsamples: int | None = None
                               ) -> DiscrepancyResult:
    """Dictionary discrepancy between the rescaled measure at scale eps
    and the homogeneous limit measure, sharing one sample cloud."""
    sess = _DiscrepancySession(S, p, R, [eps], kind="smooth", budget=budget,
                               seed=seed, nsamples=nsamples)
    return sess.run(eps)


def measure_discrepancy_spherical(S: SRStructure, p, R: float, eps: float,
                                  budget: int = 1, seed: int = 0,
                                  nsamples: int | None = None
                                  ) -> DiscrepancyResult:
    """Same comparison for the spherical-density-weighted measure; the
    left side weights samples by a locally fitted density model and the
    right side by the constant density at p."""
    sess = _DiscrepancySession(S, p, R, [eps], kind="spherical",
                               budget=budget, seed=seed, nsamples=nsamples)
    return sess.run(eps)


@dataclass(frozen=True)
class BlowupExperiment:
    point: tuple
    R: float
    kind: str
    eps: tuple[float, ...]
    distortion: tuple[DistortionResult, ...]
    discrepancy: tuple[DiscrepancyResult, ...]


def blowup_experiment(S: SRStructure, p, R: float, eps_schedule,
                      kind: str = "smooth", pairs: int = 40, budget: int = 1,
                      seed: int = 0,
                      nsamples: int | None = None) -> BlowupExperiment:
    """Distortion and measure discrepancy along a whole eps schedule,
    reusing one chart, one nilpotent approximation, and one sample cloud."""
    sched = tuple(float(e) for e in eps_schedule)
    sess = _DiscrepancySession(S, p, R, sched, kind=kind, budget=budget,
                               seed=seed, nsamples=nsamples)
    dist = tuple(gh_distortion(S, p, R, e, pairs=pairs, budget=budget,
                               seed=seed, N=sess.N) for e in sched)
    disc = tuple(sess.run(e) for e in sched)
    return BlowupExperiment(point=tuple(float(c) for c in p), R=float(R),
                            kind=kind, eps=sched, distortion=dist,
                            discrepancy=disc)


def mu_eps_integral(S: SRStructure, N: NilpotentApprox, p, R: float,
                    eps: float, H: np.ndarray, Y: np.ndarray, boxvol: float,
                    budget: int = 1, seed: int = 0) -> np.ndarray:
    """Plain rescaled-measure integrals of the rows of H over the given
    cloud; exposed so the dilation re-parametrization identity (halving
    eps, doubling R, dilating the cloud) can be asserted exactly."""
    p = np.asarray(p, dtype=float)
    Xc = N.dilate(Y, eps)
    Xa = N.chart.from_chart_batch(Xc)
    cls_amb, _ = ball_membership(S, p, R * eps, Xa, seed=seed,
                                 **_membership_tier(budget))
    w = np.where(cls_amb == 1, 1.0, np.where(cls_amb == 0, 0.5, 0.0))
    term = w * np.abs(S.volume_at(Xa)) * _chart_jac_dets(N.chart, Xc)
    return boxvol * (H * term[None, :]).mean(axis=1)
