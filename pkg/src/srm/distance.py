"""Distance engine: direct control optimization plus Hamiltonian shooting.

Distances are computed on a fixed unit time horizon by minimizing control
energy; for the minimizer the length equals the square root of the energy.
The direct path is a batched Adam loop with quadratic endpoint penalty and
increasing penalty weight, finished by Gauss-Newton projection onto the
endpoint constraint, so reported values are feasible-trajectory lengths
(upper bounds up to integration error).  Error bars are heuristic; the
only certified lower bound is the Riemannian comparison |q-p| / sup|G|.

All loops run a fixed, budget-determined number of iterations so that
results are bit-reproducible for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .compiled import CompiledSystem, compile_system
from .errors import StepFailure, Unreachable
from .rng import stream


def _compiled_of(obj) -> CompiledSystem:
    from .nilpotent import NilpotentApprox

    if isinstance(obj, NilpotentApprox):
        return compile_system(obj.fields)
    return compile_system(obj.fields, obj.volume)


def _box_of(obj):
    from .nilpotent import NilpotentApprox

    if isinstance(obj, NilpotentApprox):
        return obj.as_structure().box
    return obj.box


def _weights_of(obj, p):
    from .flag import flag_at
    from .nilpotent import NilpotentApprox

    if isinstance(obj, NilpotentApprox):
        return obj.weights
    return flag_at(obj, p).weights


# ---------------------------------------------------------------------------
# batched RK4 rollout with hand-written reverse pass


def _rollout(cs: CompiledSystem, q0: np.ndarray, U: np.ndarray, sub: int):
    B, K, m = U.shape
    h = 1.0 / (K * sub)
    q = q0
    trace = []
    for j in range(K):
        u = U[:, j, :]
        for _ in range(sub):
            a1 = q
            k1 = cs.F(a1, u)
            a2 = a1 + (0.5 * h) * k1
            k2 = cs.F(a2, u)
            a3 = a1 + (0.5 * h) * k2
            k3 = cs.F(a3, u)
            a4 = a1 + h * k3
            k4 = cs.F(a4, u)
            q = a1 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            trace.append((j, a1, a2, a3, a4))
    return q, trace


def _rollout_vjp(cs: CompiledSystem, U: np.ndarray, trace, lam_T: np.ndarray):
    """Gradient of lam_T . q_T with respect to U and q0."""
    B, K, m = U.shape
    sub = len(trace) // K
    h = 1.0 / (K * sub)
    lam = lam_T
    gU = np.zeros_like(U)

    def jt(a, u, v):
        return np.einsum("...kl,...k->...l", cs.JU(a, u), v)

    for j, a1, a2, a3, a4 in reversed(trace):
        u = U[:, j, :]
        b4 = (h / 6.0) * lam
        c4 = jt(a4, u, b4)
        b3 = (h / 3.0) * lam + h * c4
        c3 = jt(a3, u, b3)
        b2 = (h / 3.0) * lam + (0.5 * h) * c3
        c2 = jt(a2, u, b2)
        b1 = (h / 6.0) * lam + (0.5 * h) * c2
        c1 = jt(a1, u, b1)
        gU[:, j, :] += (cs.covector_controls(a1, b1) + cs.covector_controls(a2, b2)
                        + cs.covector_controls(a3, b3) + cs.covector_controls(a4, b4))
        lam = lam + c1 + c2 + c3 + c4
    return gU, lam


def _endpoint_jacobian(cs, q0, U, sub):
    """J[:, k, :, :] = d q_T[k] / d U, via one reverse pass per output."""
    B, K, m = U.shape
    n = q0.shape[-1]
    qT, trace = _rollout(cs, q0, U, sub)
    J = np.empty((B, n, K, m))
    for k in range(n):
        lam = np.zeros((B, n))
        lam[:, k] = 1.0
        gU, _ = _rollout_vjp(cs, U, trace, lam)
        J[:, k] = gU
    return qT, J


# ---------------------------------------------------------------------------
# direct solver


@dataclass
class SolveResult:
    value: np.ndarray      # feasible-path length per instance (upper estimate)
    error: np.ndarray      # heuristic error bar
    resid: np.ndarray      # endpoint residual in scaled coordinates
    feasible: np.ndarray   # resid below tolerance
    controls: np.ndarray   # best controls (N, K, m)
    q0: np.ndarray


class DirectSolver:
    """Piecewise-constant-control distance upper bounds, batched."""

    def __init__(self, obj, K: int = 32, substeps: int = 1, starts: int = 16,
                 feas_tol: float = 1e-7):
        self.cs = _compiled_of(obj)
        self.obj = obj
        self.n = self.cs.n
        self.m = self.cs.m
        self.K = K
        self.substeps = substeps
        self.starts = starts
        self.feas_tol = feas_tol
        self.fb = self.cs.frobenius_bound(_box_of(obj))

    # -- initialization ----------------------------------------------------

    def _initial_controls(self, q0, targets, scale, rng):
        N = targets.shape[0]
        K, m, S = self.K, self.m, self.starts
        U = np.zeros((N, S, K, m))
        G0 = self.cs.G(q0)                       # (N, n, m)
        delta = targets - q0
        upin = np.linalg.pinv(G0)                # (N, m, n)
        ustr = np.einsum("...mn,...n->...m", upin, delta)
        U[:, 0] = ustr[:, None, :]
        si = 1
        # rotating starts sweep loop-like controls in the first two slots
        mags = np.maximum(np.linalg.norm(ustr, axis=-1), scale)
        tgrid = (np.arange(K) + 0.5) / K
        for phi, c in ((2 * np.pi, 1.0), (-2 * np.pi, 1.0), (2 * np.pi, 2.0),
                       (-2 * np.pi, 2.0), (np.pi, 1.0), (-np.pi, 1.0),
                       (2 * np.pi, 4.0), (-2 * np.pi, 4.0)):
            if si >= S:
                break
            ang = phi * tgrid
            base = np.zeros((N, K, m))
            if m >= 2:
                base[..., 0] = np.cos(ang)[None, :]
                base[..., 1] = np.sin(ang)[None, :]
            else:
                base[..., 0] = np.sign(np.cos(ang))[None, :]
            # superpose the chord so winding-plus-drift pairs get a start
            # in their homotopy class; for vertical pairs ustr vanishes
            U[:, si] = base * (c * mags)[:, None, None] + ustr[:, None, :]
            si += 1
        while si < S:
            U[:, si] = (ustr[:, None, :]
                        + rng.standard_normal((N, K, m))
                        * (0.7 * scale / np.sqrt(m))[:, None, None])
            si += 1
        return U

    # -- main loop ----------------------------------------------------------

    def solve(self, q0, targets, weights, budget: int = 1, seed: int = 0,
              tag: str = "solve") -> SolveResult:
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        N = targets.shape[0]
        q0 = np.broadcast_to(np.asarray(q0, dtype=float), targets.shape).copy()
        rng = stream(seed, "direct", tag)
        w = np.array(weights, dtype=float)

        delta = targets - q0
        scale = np.max(np.abs(delta) ** (1.0 / w), axis=-1)
        scale = np.maximum(scale, 1e-9)
        sc = scale[:, None] ** w[None, :]        # per-coordinate scales (N, n)

        U = self._initial_controls(q0, targets, scale, rng)
        B = N * self.starts
        Ub = U.reshape(B, self.K, self.m)
        q0b = np.repeat(q0, self.starts, axis=0)
        tgb = np.repeat(targets, self.starts, axis=0)
        scb = np.repeat(sc, self.starts, axis=0)

        # budget -1 is the screening tier: multi-start initialization and
        # endpoint projection only, still a valid curve hence an upper bound
        iters = max(40 + 80 * budget, 0)
        lr = 0.12 * np.repeat(scale, self.starts)[:, None, None]
        mom = np.zeros_like(Ub)
        vel = np.zeros_like(Ub)
        t = 0
        stage_lengths = []
        for rho in (30.0, 300.0, 3000.0):
            for _ in range(iters):
                t += 1
                qT, trace = _rollout(self.cs, q0b, Ub, self.substeps)
                r = (qT - tgb) / scb
                lam = (2.0 * rho) * r / scb
                gU, _ = _rollout_vjp(self.cs, Ub, trace, lam)
                gU += (2.0 / self.K) * Ub
                mom = 0.9 * mom + 0.1 * gU
                vel = 0.999 * vel + 0.001 * gU * gU
                mh = mom / (1 - 0.9 ** t)
                vh = vel / (1 - 0.999 ** t)
                Ub -= lr * mh / (np.sqrt(vh) + 1e-12)
            stage_lengths.append(
                np.linalg.norm(Ub, axis=-1).sum(axis=-1) / self.K)

        Ub, resid = self._project(q0b, Ub, tgb, scb,
                                  iters=max(5 + 2 * budget, 3))
        length = np.linalg.norm(Ub, axis=-1).sum(axis=-1) / self.K

        # per-instance best feasible start
        length = length.reshape(N, self.starts)
        resid = resid.reshape(N, self.starts)
        feas = resid < self.feas_tol
        cost = np.where(feas, length, np.inf)
        best = np.argmin(cost, axis=1)
        rows = np.arange(N)
        any_feas = feas[rows, best]
        # fall back to the smallest-residual start when nothing is feasible
        fallback = np.argmin(resid, axis=1)
        best = np.where(any_feas, best, fallback)
        val = length[rows, best]
        res = resid[rows, best]
        Ubest = Ub.reshape(N, self.starts, self.K, self.m)[rows, best]

        conv = np.abs(stage_lengths[-1] - stage_lengths[-2]).reshape(
            N, self.starts)[rows, best]
        err = np.maximum(conv, 5e-4 * val) + res * scale
        return SolveResult(value=val, error=err, resid=res,
                           feasible=any_feas, controls=Ubest, q0=q0)

    def _project(self, q0b, Ub, tgb, scb, iters: int):
        """Gauss-Newton steps driving the endpoint onto the target."""
        B = Ub.shape[0]
        for _ in range(iters):
            qT, J = _endpoint_jacobian(self.cs, q0b, Ub, self.substeps)
            r = (tgb - qT) / scb
            Jf = (J / scb[:, :, None, None]).reshape(B, self.n, -1)
            JJt = np.einsum("bik,bjk->bij", Jf, Jf)
            JJt += 1e-12 * np.eye(self.n)[None]
            try:
                y = np.linalg.solve(JJt, r[..., None])[..., 0]
            except np.linalg.LinAlgError:
                y = np.stack([np.linalg.lstsq(JJt[b], r[b], rcond=None)[0]
                              for b in range(B)])
            dU = np.einsum("bik,bi->bk", Jf, y).reshape(Ub.shape)
            Ub = Ub + dU
        qT, _ = _rollout(self.cs, q0b, Ub, self.substeps)
        resid = np.linalg.norm((qT - tgb) / scb, axis=-1)
        return Ub, resid


# ---------------------------------------------------------------------------
# Hamiltonian shooting


def _ham_rollout(cs, q0, lam0, T: float, steps: int):
    h = T / steps
    q, lam = q0, lam0

    def rhs(q, lam):
        u = cs.covector_controls(q, lam)
        dq = cs.F(q, u)
        dlam = -np.einsum("...kl,...k->...l", cs.JU(q, u), lam)
        return dq, dlam

    path = [q]
    for _ in range(steps):
        dq1, dl1 = rhs(q, lam)
        dq2, dl2 = rhs(q + 0.5 * h * dq1, lam + 0.5 * h * dl1)
        dq3, dl3 = rhs(q + 0.5 * h * dq2, lam + 0.5 * h * dl2)
        dq4, dl4 = rhs(q + h * dq3, lam + h * dl3)
        q = q + (h / 6) * (dq1 + 2 * dq2 + 2 * dq3 + dq4)
        lam = lam + (h / 6) * (dl1 + 2 * dl2 + 2 * dl3 + dl4)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(lam))):
            raise StepFailure(f"normal extremal blew up after {len(path)} steps")
        path.append(q)
    return np.array(path), lam


def geodesic_shoot(obj, p, covector, T: float = 1.0, steps: int = 256):
    """Integrate the normal extremal from p with the given initial covector.

    Returns the path as an array of shape (steps+1, n).  Energy is checked
    for conservation and StepFailure is raised on blowup or drift.
    """
    cs = _compiled_of(obj)
    q0 = np.asarray(p, dtype=float).reshape(1, -1)
    lam0 = np.asarray(covector, dtype=float).reshape(1, -1)
    u0 = cs.covector_controls(q0, lam0)
    H0 = 0.5 * float(np.sum(u0 ** 2))
    path, lamT = _ham_rollout(cs, q0, lam0, T, steps)
    uT = cs.covector_controls(path[-1], lamT)
    HT = 0.5 * float(np.sum(uT ** 2))
    if H0 > 1e-12 and abs(HT - H0) > 1e-6 * H0:
        raise StepFailure(
            f"energy drift {abs(HT - H0) / H0:.2e} exceeds 1e-6; raise steps")
    return path[:, 0, :]


def _shoot_refine(cs, p, target, lam_init, scale, steps: int = 256):
    """Polish a distance estimate by solving the shooting equations."""
    p = np.asarray(p, dtype=float)
    target = np.asarray(target, dtype=float)

    def res(lam0):
        path, _ = _ham_rollout(cs, p.reshape(1, -1), lam0.reshape(1, -1),
                               1.0, steps)
        return (path[-1][0] - target) / max(scale, 1e-9)

    try:
        sol = least_squares(res, lam_init, method="lm", xtol=1e-14,
                            ftol=1e-14, max_nfev=400)
    except (StepFailure, FloatingPointError):
        return None
    if not np.all(np.isfinite(sol.x)) or np.linalg.norm(sol.fun) > 1e-9:
        return None
    u0 = cs.covector_controls(p.reshape(1, -1), sol.x.reshape(1, -1))
    H = 0.5 * float(np.sum(u0 ** 2))
    return np.sqrt(2.0 * H)


# ---------------------------------------------------------------------------
# public distance API


@dataclass(frozen=True)
class DistanceEstimate:
    value: float          # best feasible-path length (upper-flavored)
    error: float          # heuristic error bar
    lower: float          # certified Riemannian comparison bound
    method: str
    has_upper: bool = True
    has_lower: bool = True

    @property
    def upper(self) -> float:
        return self.value


def distance(obj, p, q, budget: int = 2, seed: int = 0) -> DistanceEstimate:
    """Symmetrized two-sided distance estimate between p and q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.array_equal(p, q):
        return DistanceEstimate(0.0, 0.0, 0.0, "trivial")
    w = _weights_of(obj, tuple(p))
    solver = DirectSolver(obj, K=32, substeps=2, starts=16)
    res = solver.solve(np.stack([p, q]), np.stack([q, p]), w,
                       budget=budget, seed=seed, tag="dist")
    if not np.any(res.feasible):
        raise Unreachable(
            f"no feasible trajectory found between {p.tolist()} and"
            f" {q.tolist()} at budget {budget}")
    vals = np.where(res.feasible, res.value, np.inf)
    side = int(np.argmin(vals))
    val = float(res.value[side])
    err = float(res.error[side])
    method = "direct"

    # shooting refinement from the winning side's first control
    u0 = res.controls[side, 0]
    q0 = res.q0[side]
    G0 = solver.cs.G(q0.reshape(1, -1))[0]
    lam_init, *_ = np.linalg.lstsq(G0.T, u0, rcond=None)
    scale = float(np.max(np.abs(q - p) ** (1.0 / np.array(w, dtype=float))))
    target = (q, p)[side]
    d_sh = _shoot_refine(solver.cs, q0, target, lam_init, scale)
    if d_sh is not None and np.isfinite(d_sh):
        if d_sh < val + err:
            if d_sh < val:
                val, method = float(d_sh), "shooting"
            err = float(min(err, abs(val - d_sh) + 1e-6))

    lower = float(np.linalg.norm(q - p) / solver.fb)
    lower = min(lower, val)
    return DistanceEstimate(value=val, error=err, lower=lower, method=method)


def batched_distance(obj, center, points, weights=None, budget: int = 1,
                     seed: int = 0, K: int = 16, substeps: int = 1,
                     starts: int = 6, tag: str = "batch") -> SolveResult:
    """Distance upper bounds from one center to many targets."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if weights is None:
        weights = _weights_of(obj, tuple(np.asarray(center, dtype=float)))
    solver = DirectSolver(obj, K=K, substeps=substeps, starts=starts)
    return solver.solve(np.asarray(center, dtype=float), points, weights,
                        budget=budget, seed=seed, tag=tag)


def pairwise_distance(obj, starts_pts, ends_pts, weights, budget: int = 1,
                      seed: int = 0, K: int = 16, substeps: int = 1,
                      starts: int = 6, tag: str = "pairs") -> SolveResult:
    """Distance upper bounds for aligned point pairs."""
    a = np.atleast_2d(np.asarray(starts_pts, dtype=float))
    b = np.atleast_2d(np.asarray(ends_pts, dtype=float))
    solver = DirectSolver(obj, K=K, substeps=substeps, starts=starts)
    return solver.solve(a, b, weights, budget=budget, seed=seed, tag=tag)


def random_reachable_cloud(obj, center, radius, count: int, seed: int = 0,
                           K: int = 8, substeps: int = 2,
                           tag: str = "reach") -> np.ndarray:
    """Endpoints of random constant-speed horizontal paths of given length.

    Every endpoint is within distance radius of the center, so the cloud
    outlines the ball B(center, radius) from inside; used for bounding
    boxes around balls before MC volume runs.
    """
    cs = _compiled_of(obj)
    rng = stream(seed, "reach", tag, K)
    u = rng.normal(size=(count, K, cs.m))
    u /= np.linalg.norm(u, axis=-1, keepdims=True) + 1e-300
    u *= radius
    q0 = np.broadcast_to(np.asarray(center, dtype=float), (count, cs.n)).copy()
    qt, _ = _rollout(cs, q0, u, substeps)
    return qt


@dataclass
class MembershipSolve:
    """Shared solve behind ball_membership: coarse bounds plus near solves."""

    near: SolveResult | None
    near_idx: np.ndarray
    lower: np.ndarray
    emax: float
    disc: float = 0.0


def ball_membership(obj, center, eps, points, budget: int = 1, seed: int = 0,
                    weights=None, K: int = 16, substeps: int = 1,
                    starts: int = 6, res: MembershipSolve | None = None):
    """Classify points against the ball B(center, eps): +1 in, -1 out, 0 band.

    eps may be a scalar or a list; with a list one distance solve is shared
    by all radii, which makes the classification monotone in eps for free.
    Points whose Riemannian-extension lower bound |q-p|/sup||G|| already
    exceeds max(eps) are classified out without a solve.  Piecewise-constant
    controls overshoot curved geodesics by up to about (pi/K)^2/6 in relative
    length, so the out test keeps that margin in the band.  Returns
    (classes, MembershipSolve); pass res back in to reuse the solve.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    center = np.asarray(center, dtype=float)
    eps_list = np.atleast_1d(np.asarray(eps, dtype=float))
    emax = float(eps_list.max())
    if res is None:
        fb = _compiled_of(obj).frobenius_bound(_box_of(obj))
        lb = np.linalg.norm(points - center, axis=-1) / fb
        near_idx = np.nonzero(lb <= emax)[0]
        near = None
        if near_idx.size:
            near = batched_distance(obj, center, points[near_idx],
                                    weights=weights, budget=budget, seed=seed,
                                    K=K, substeps=substeps, starts=starts,
                                    tag="member")
        res = MembershipSolve(near=near, near_idx=near_idx, lower=lb,
                              emax=emax, disc=1.645 / (K * K))
    elif emax > res.emax * (1 + 1e-12):
        raise ValueError("reused membership solve covers a smaller radius")
    out = []
    for e in eps_list:
        cls = -np.ones(points.shape[0], dtype=int)
        if res.near is not None:
            sub = np.zeros(res.near_idx.size, dtype=int)
            band = np.maximum(res.near.error,
                              np.where(res.near.feasible, 0.0, np.inf))
            sub[res.near.value + band < e] = 1
            sub[res.near.value - band >= e * (1.0 + res.disc)] = -1
            cls[res.near_idx] = sub
        out.append(cls)
    classes = out[0] if np.isscalar(eps) or np.ndim(eps) == 0 else np.array(out)
    return classes, res


def ball_indicator(obj, center, eps, budget: int = 1, seed: int = 0):
    """Three-way membership oracle for B(center, eps); caches per solve."""
    cache: dict[bytes, MembershipSolve] = {}

    def classify(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        key = points.tobytes()
        cls, res = ball_membership(obj, center, eps, points,
                                   budget=budget, seed=seed,
                                   res=cache.get(key))
        cache[key] = res
        return cls

    return classify
