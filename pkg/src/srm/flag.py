"""Bracket flag of a generating family: growth vector, weights, Q."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from . import exactla
from .errors import NotBracketGenerating
from .rng import stream
from .vf import VectorField, lie_bracket, sign_canonical_key

# A bracket word is either a generator index (int, 1-based) or a pair
# (g, word): the generator bracketed onto the left of a shorter word.
BracketWord = int | tuple


def word_length(w: BracketWord) -> int:
    if isinstance(w, int):
        return 1
    return word_length(w[0]) + word_length(w[1])


def word_str(w: BracketWord) -> str:
    if isinstance(w, int):
        return f"X{w}"
    return f"[{word_str(w[0])},{word_str(w[1])}]"


def word_value(fields: tuple[VectorField, ...], w: BracketWord) -> VectorField:
    """Evaluate a bracket word to a symbolic vector field."""
    if isinstance(w, int):
        return fields[w - 1]
    return lie_bracket(word_value(fields, w[0]), word_value(fields, w[1]))


_ENUM_CACHE: dict = {}


def enumerate_brackets(fields: tuple[VectorField, ...], depth: int,
                       ) -> list[list[tuple[BracketWord, VectorField]]]:
    """Left-nested bracket words by length, deduplicated up to sign.

    Returns one list per length 1..depth of (word, symbolic value) pairs;
    zero fields and sign duplicates of anything already kept are dropped.
    Once a length produces nothing new, all longer lists are empty.
    """
    if depth < 1:
        raise ValueError("depth >= 1 required")
    cache_key = (tuple(fields), depth)
    if cache_key in _ENUM_CACHE:
        return _ENUM_CACHE[cache_key]
    seen: set = set()
    levels: list[list[tuple[BracketWord, VectorField]]] = []
    current: list[tuple[BracketWord, VectorField]] = []
    for g, f in enumerate(fields, start=1):
        key = sign_canonical_key(f)
        if key == "zero" or key in seen:
            continue
        seen.add(key)
        current.append((g, f))
    levels.append(current)
    for _ in range(2, depth + 1):
        nxt: list[tuple[BracketWord, VectorField]] = []
        for g, gf in enumerate(fields, start=1):
            for w, wf in levels[-1]:
                val = lie_bracket(gf, wf)
                key = sign_canonical_key(val)
                if key == "zero" or key in seen:
                    continue
                seen.add(key)
                nxt.append(((g, w), val))
        levels.append(nxt)
        if not nxt:
            break
    while len(levels) < depth:
        levels.append([])
    _ENUM_CACHE[cache_key] = levels
    return levels


def _is_rational_point(p) -> bool:
    return all(isinstance(c, (int, Fraction)) for c in p)


@dataclass(frozen=True)
class FlagData:
    point: tuple
    growth: tuple[int, ...]
    weights: tuple[int, ...]
    step: int
    Q: int
    # per level 1..step: kept bracket words with symbolic fields and their
    # float values at the point
    levels: tuple[tuple[tuple[BracketWord, VectorField, tuple[float, ...]], ...], ...]
    # greedy spanning choice: per level, the words completing the basis
    spanning: tuple[tuple[tuple[BracketWord, VectorField], ...], ...]
    exact: bool
    depth_cap: int

    @property
    def dim(self) -> int:
        return len(self.weights)

    def new_per_level(self) -> tuple[int, ...]:
        prev = 0
        out = []
        for n_i in self.growth:
            out.append(n_i - prev)
            prev = n_i
        return tuple(out)


def _rank_float(rows: list[tuple[float, ...]], tol: float) -> int:
    if not rows:
        return 0
    a = np.array(rows, dtype=float)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def flag_at(S, p, tol: float = 1e-9, depth_cap: int = 6) -> FlagData:
    """Growth vector, weights and Q at a point.

    Ranks use singular values above tol times the largest; when the point
    is given with exact rational coordinates, exact Gaussian elimination
    over the rationals decides instead (and the two are cross-checked on
    the canonical structures by tests).
    """
    n = S.dim
    exact = _is_rational_point(p)
    p_exact = tuple(Fraction(c) for c in p) if exact else None
    p_float = tuple(float(c) for c in p)

    level_words = enumerate_brackets(S.fields, depth_cap)
    growth: list[int] = []
    kept_levels = []
    spanning = []
    exact_rows: list[list[Fraction]] = []
    float_rows: list[tuple[float, ...]] = []
    span_rows: list[list[Fraction]] = []
    span_rows_f: list[tuple[float, ...]] = []

    for li, words in enumerate(level_words, start=1):
        this_level = []
        this_span = []
        for w, f in words:
            if exact:
                val = f.eval(p_exact)
                fval = tuple(float(v) for v in val)
                exact_rows.append(list(val))
            else:
                fval = tuple(float(v) for v in f.eval(p_float))
            float_rows.append(fval)
            this_level.append((w, f, fval))
            # greedy spanning set: keep the word if it enlarges the span
            if exact:
                cand = span_rows + [list(val)]
                if exactla.rank(cand) > len(span_rows):
                    span_rows.append(list(val))
                    this_span.append((w, f))
            else:
                cand_f = span_rows_f + [fval]
                if _rank_float(cand_f, tol) > len(span_rows_f):
                    span_rows_f.append(fval)
                    this_span.append((w, f))
        if exact:
            r = exactla.rank(exact_rows)
        else:
            r = _rank_float(float_rows, tol)
        growth.append(r)
        kept_levels.append(tuple(this_level))
        spanning.append(tuple(this_span))
        if r == n:
            break
        if li < len(level_words) and not level_words[li]:
            # bracket algebra saturated below full rank
            raise NotBracketGenerating(p_float, tuple(growth), depth_cap)

    if growth[-1] != n:
        raise NotBracketGenerating(p_float, tuple(growth), depth_cap)

    weights = []
    prev = 0
    for s, n_s in enumerate(growth, start=1):
        weights.extend([s] * (n_s - prev))
        prev = n_s
    q_levels = sum(s * (n_s - (growth[s - 2] if s >= 2 else 0))
                   for s, n_s in enumerate(growth, start=1))
    q_weights = sum(weights)
    assert q_levels == q_weights

    return FlagData(
        point=tuple(p_exact) if exact else p_float,
        growth=tuple(growth),
        weights=tuple(weights),
        step=len(growth),
        Q=q_levels,
        levels=tuple(kept_levels),
        spanning=tuple(spanning),
        exact=exact,
        depth_cap=depth_cap,
    )


def grid_points(S, counts) -> list[tuple[Fraction, ...]]:
    """Exact rational grid over the box, endpoints included."""
    axes = []
    for (lo, hi), cnt in zip(S.box, counts):
        if cnt == 1:
            axes.append([(lo + hi) / 2])
        else:
            axes.append([lo + (hi - lo) * Fraction(k, cnt - 1) for k in range(cnt)])
    return [tuple(pt) for pt in product(*axes)]


def classify_point(S, p, tol: float = 1e-9, probe_radius: float = 0.02,
                   probe_count: int = 8, seed: int = 0, depth_cap: int = 6,
                   rng=None):
    """Classify one point as regular or singular by probe sampling.

    The point is regular iff every random probe in the surrounding ball
    has the same growth vector.  Statistical, not a proof.  Returns
    (class string, FlagData at p).
    """
    fl = flag_at(S, p, tol=tol, depth_cap=depth_cap)
    if rng is None:
        rng = stream(seed, "classify", *(float(c) for c in p))
    lo, hi = S.box_lo(), S.box_hi()
    regular = True
    for _ in range(probe_count):
        u = rng.standard_normal(S.dim)
        u /= np.linalg.norm(u)
        rad = probe_radius * rng.random() ** (1.0 / S.dim)
        q = np.clip(np.array([float(c) for c in p]) + rad * u, lo, hi)
        fq = flag_at(S, tuple(q), tol=tol, depth_cap=depth_cap)
        if fq.growth != fl.growth:
            regular = False
            break
    return ("regular" if regular else "singular"), fl


def classify_grid(S, counts, tol: float = 1e-9, probe_radius: float = 0.02,
                  probe_count: int = 8, seed: int = 0, depth_cap: int = 6):
    """Classify grid points as regular or singular by probe sampling."""
    pts = grid_points(S, counts)
    out = {}
    for idx, p in enumerate(pts):
        cls, fl = classify_point(S, p, tol=tol, probe_radius=probe_radius,
                                 probe_count=probe_count, depth_cap=depth_cap,
                                 rng=stream(seed, "classify", idx))
        out[p] = (cls, fl)
    return out
