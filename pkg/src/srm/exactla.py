"""Small exact linear algebra over Fractions.

Bracket values at rational points are exact, so rank and determinant
decisions on them need no tolerance at all.  Matrices here are lists of
row lists; sizes stay tiny (dim <= 6 or so), so fraction-pivot Gaussian
elimination is plenty.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence


def _copy(matrix) -> list[list[Fraction]]:
    return [[Fraction(v) for v in row] for row in matrix]


def rank(matrix: Sequence[Sequence[Fraction]]) -> int:
    """Exact rank by Gaussian elimination."""
    m = _copy(matrix)
    if not m or not m[0]:
        return 0
    rows, cols = len(m), len(m[0])
    r = 0
    for c in range(cols):
        pivot = None
        for i in range(r, rows):
            if m[i][c] != 0:
                pivot = i
                break
        if pivot is None:
            continue
        m[r], m[pivot] = m[pivot], m[r]
        inv = Fraction(1) / m[r][c]
        m[r] = [v * inv for v in m[r]]
        for i in range(rows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        r += 1
        if r == rows:
            break
    return r


def det(matrix: Sequence[Sequence[Fraction]]) -> Fraction:
    """Exact determinant by fraction-pivot elimination."""
    m = _copy(matrix)
    n = len(m)
    if any(len(row) != n for row in m):
        raise ValueError("determinant of a non-square matrix")
    result = Fraction(1)
    for c in range(n):
        pivot = None
        for i in range(c, n):
            if m[i][c] != 0:
                pivot = i
                break
        if pivot is None:
            return Fraction(0)
        if pivot != c:
            m[c], m[pivot] = m[pivot], m[c]
            result = -result
        result *= m[c][c]
        inv = Fraction(1) / m[c][c]
        for i in range(c + 1, n):
            if m[i][c] != 0:
                f = m[i][c] * inv
                m[i] = [a - f * b for a, b in zip(m[i], m[c])]
    return result


def inverse(matrix: Sequence[Sequence[Fraction]]) -> list[list[Fraction]]:
    """Exact inverse; raises ValueError when singular."""
    n = len(matrix)
    m = _copy(matrix)
    aug = [m[i] + [Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for c in range(n):
        pivot = None
        for i in range(c, n):
            if aug[i][c] != 0:
                pivot = i
                break
        if pivot is None:
            raise ValueError("singular matrix")
        aug[c], aug[pivot] = aug[pivot], aug[c]
        inv = Fraction(1) / aug[c][c]
        aug[c] = [v * inv for v in aug[c]]
        for i in range(n):
            if i != c and aug[i][c] != 0:
                f = aug[i][c]
                aug[i] = [a - f * b for a, b in zip(aug[i], aug[c])]
    return [row[n:] for row in aug]


def nullspace(matrix: Sequence[Sequence[Fraction]]) -> list[list[Fraction]]:
    """Exact basis of the right nullspace (one vector per free column)."""
    m = _copy(matrix)
    if not m or not m[0]:
        cols = len(m[0]) if m else 0
        return [[Fraction(int(i == j)) for j in range(cols)] for i in range(cols)]
    rows, cols = len(m), len(m[0])
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        pivot = None
        for i in range(r, rows):
            if m[i][c] != 0:
                pivot = i
                break
        if pivot is None:
            continue
        m[r], m[pivot] = m[pivot], m[r]
        inv = Fraction(1) / m[r][c]
        m[r] = [v * inv for v in m[r]]
        for i in range(rows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == rows:
            break
    basis = []
    pivot_set = set(pivots)
    for c in range(cols):
        if c in pivot_set:
            continue
        vec = [Fraction(0)] * cols
        vec[c] = Fraction(1)
        for row_i, pc in enumerate(pivots):
            vec[pc] = -m[row_i][c]
        basis.append(vec)
    return basis


def matvec(matrix, vec) -> list[Fraction]:
    return [sum((Fraction(a) * Fraction(b) for a, b in zip(row, vec)), Fraction(0))
            for row in matrix]


def matmul(a, b) -> list[list[Fraction]]:
    cols = list(zip(*b))
    return [[sum((Fraction(x) * Fraction(y) for x, y in zip(row, col)), Fraction(0))
             for col in cols] for row in a]


def transpose(a) -> list[list[Fraction]]:
    return [list(col) for col in zip(*a)]
