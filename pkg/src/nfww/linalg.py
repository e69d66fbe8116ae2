"""Exact rational linear algebra (Gauss-Jordan over :class:`fractions.Fraction`)."""

from __future__ import annotations

from fractions import Fraction


class InconsistentSystem(ValueError):
    """The linear system has no solution or no unique solution."""

    def __init__(self, message: str, rows=None, rhs=None):
        super().__init__(message)
        self.rows = rows
        self.rhs = rhs


def rank(rows: list) -> int:
    return len(_echelon([list(map(Fraction, r)) + [Fraction(0)] for r in rows])[1])


def _echelon(aug: list) -> tuple:
    """Reduced row echelon form of an augmented matrix; returns (matrix, pivot columns)."""
    m = [row[:] for row in aug]
    ncols = len(m[0]) - 1 if m else 0
    pivots = []
    row = 0
    for col in range(ncols):
        pick = next((i for i in range(row, len(m)) if m[i][col] != 0), None)
        if pick is None:
            continue
        m[row], m[pick] = m[pick], m[row]
        p = m[row][col]
        m[row] = [v / p for v in m[row]]
        for i in range(len(m)):
            if i != row and m[i][col] != 0:
                f = m[i][col]
                m[i] = [a - f * b for a, b in zip(m[i], m[row])]
        pivots.append(col)
        row += 1
    return m, pivots


def solve_unique(rows: list, rhs: list) -> list:
    """Unique solution of ``rows @ x = rhs``; raises :class:`InconsistentSystem` otherwise."""
    if not rows:
        raise InconsistentSystem("empty system", rows, rhs)
    aug = [list(map(Fraction, r)) + [Fraction(b)] for r, b in zip(rows, rhs)]
    m, pivots = _echelon(aug)
    n = len(rows[0])
    for row in m[len(pivots):]:
        if row[-1] != 0:
            raise InconsistentSystem("incompatible equations", rows, rhs)
    if len(pivots) < n:
        raise InconsistentSystem(f"rank {len(pivots)} < {n} unknowns", rows, rhs)
    x = [Fraction(0)] * n
    for i, col in enumerate(pivots):
        x[col] = m[i][-1]
    return x
