"""Adapted bracket frames and the frame volume nu."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

from . import exactla
from .errors import SRMError
from .flag import BracketWord, FlagData, word_length
from .vf import VectorField

import numpy as np


@dataclass(frozen=True)
class AdaptedFrame:
    """n bracket words whose values at p form a basis adapted to the flag."""

    words: tuple[BracketWord, ...]
    fields: tuple[VectorField, ...]
    values: tuple[tuple, ...]  # rows, exact Fractions when point is rational
    level_sizes: tuple[int, ...]
    total_length: int
    exact: bool

    @property
    def dim(self) -> int:
        return len(self.words)

    def level_block(self, j: int) -> tuple[int, int]:
        """Row range of level j (1-based) in the frame ordering."""
        start = sum(self.level_sizes[:j - 1])
        return start, start + self.level_sizes[j - 1]

    def matrix(self) -> list[list]:
        return [list(v) for v in self.values]

    def matrix_float(self) -> np.ndarray:
        return np.array([[float(c) for c in v] for v in self.values])


def _rank_of(rows, exact: bool, tol: float) -> int:
    if exact:
        return exactla.rank([list(r) for r in rows])
    a = np.array([[float(c) for c in r] for r in rows])
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def adapted_frames(S, p, flag: FlagData, tol: float = 1e-9,
                   max_frames: int = 512) -> list[AdaptedFrame]:
    """All adapted frames at p, one per unordered per-level word choice.

    Per level i the frame takes n_i - n_{i-1} words of length i whose
    values extend the span of the lower levels; orderings within a level
    and sign flips are not enumerated separately.
    """
    n = S.dim
    exact = flag.exact
    p_exact = tuple(Fraction(c) for c in p) if exact else None
    sizes = flag.new_per_level()

    def value_of(f: VectorField):
        if exact:
            return f.eval(p_exact)
        return tuple(float(v) for v in f.eval(tuple(float(c) for c in p)))

    frames: list[AdaptedFrame] = []

    def extend(level: int, chosen, rows):
        if len(frames) >= max_frames:
            raise SRMError(
                f"more than {max_frames} adapted frames at {p}; "
                "raise max_frames to enumerate them all")
        if level > flag.step:
            words = tuple(w for w, _, _ in chosen)
            frames.append(AdaptedFrame(
                words=words,
                fields=tuple(f for _, f, _ in chosen),
                values=tuple(v for _, _, v in chosen),
                level_sizes=sizes,
                total_length=sum(word_length(w) for w in words),
                exact=exact,
            ))
            return
        k = sizes[level - 1]
        cands = [(w, f, value_of(f)) for w, f, _ in flag.levels[level - 1]]
        if k == 0:
            extend(level + 1, chosen, rows)
            return
        for combo in combinations(cands, k):
            new_rows = rows + [c[2] for c in combo]
            if _rank_of(new_rows, exact, tol) == len(new_rows):
                extend(level + 1, chosen + list(combo), new_rows)

    extend(1, [], [])
    assert frames, "flag data guarantees at least one adapted frame"
    for fr in frames:
        assert fr.total_length == flag.Q
    return frames


def nu(S, p, frames: list[AdaptedFrame]) -> float:
    """Largest absolute omega-volume of an adapted frame at p."""
    best = None
    for fr in frames:
        v = frame_volume(S, p, fr)
        if best is None or abs(v) > abs(best):
            best = v
    return abs(float(best))


def frame_volume(S, p, frame: AdaptedFrame):
    """omega_p(Y_1,...,Y_n); exact Fraction when the point is rational."""
    if frame.exact:
        h = S.volume.eval(tuple(Fraction(c) for c in p))
        return h * exactla.det(frame.matrix())
    h = float(S.volume.eval_batch(np.array([[float(c) for c in p]]))[0])
    return h * float(np.linalg.det(frame.matrix_float()))
