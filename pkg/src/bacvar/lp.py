"""Small dense linear programs via a two-phase tableau simplex.

Sized for the envelope problems in this package (tens of variables).  Bland's
rule is used throughout so degenerate vertices cannot make it cycle.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

PIVOT_TOL = 1e-11


class InfeasibleError(ValueError):
    pass


class UnboundedError(ValueError):
    pass


@dataclass
class LpResult:
    x: np.ndarray
    fun: float


def _pivot(T: np.ndarray, basis: list, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _run(T: np.ndarray, basis: list, allowed: int) -> None:
    """Minimise the objective in the last row over columns ``< allowed``."""
    m = T.shape[0] - 1
    while True:
        col = next((j for j in range(allowed) if T[-1, j] < -PIVOT_TOL), None)
        if col is None:
            return
        best, row = np.inf, None
        for r in range(m):
            if T[r, col] > PIVOT_TOL:
                ratio = T[r, -1] / T[r, col]
                if row is None or ratio < best - 1e-15 or (abs(ratio - best) <= 1e-15 and basis[r] < basis[row]):
                    best, row = ratio, r
        if row is None:
            raise UnboundedError("objective is unbounded below")
        _pivot(T, basis, row, col)


def linprog(
    c: Sequence[float],
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    bounds: Optional[Sequence[Tuple[float, Optional[float]]]] = None,
) -> LpResult:
    """Minimise ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and bounds.

    ``bounds`` is a list of ``(lo, hi)`` with finite ``lo`` (default ``(0, None)``).
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    bounds = [(0.0, None)] * n if bounds is None else list(bounds)
    lo = np.array([b[0] for b in bounds], dtype=float)
    if not np.all(np.isfinite(lo)):
        raise ValueError("lower bounds must be finite")

    rows, rhs, kinds = [], [], []
    if A_ub is not None:
        A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
        for a, b in zip(A_ub, np.asarray(b_ub, dtype=float)):
            rows.append(a)
            rhs.append(b - a @ lo)
            kinds.append("ub")
    for j, (l, h) in enumerate(bounds):
        if h is not None:
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rhs.append(h - l)
            kinds.append("ub")
    if A_eq is not None:
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
        for a, b in zip(A_eq, np.asarray(b_eq, dtype=float)):
            rows.append(a)
            rhs.append(b - a @ lo)
            kinds.append("eq")

    m = len(rows)
    n_slack = sum(k == "ub" for k in kinds)
    width = n + n_slack + m + 1
    T = np.zeros((m + 1, width))
    k = 0
    for i, (a, b, kind) in enumerate(zip(rows, rhs, kinds)):
        T[i, :n] = a
        if kind == "ub":
            T[i, n + k] = 1.0
            k += 1
        T[i, -1] = b
        if b < 0:
            T[i, :-1] *= -1
            T[i, -1] *= -1
        T[i, n + n_slack + i] = 1.0
    basis = [n + n_slack + i for i in range(m)]

    # phase 1: minimise the sum of artificials
    T[-1, :] = -T[:m, :].sum(axis=0)
    T[-1, n + n_slack:n + n_slack + m] = 0.0
    _run(T, basis, n + n_slack)
    if T[-1, -1] < -1e-9 * max(1.0, np.abs(T[:m, -1]).max(initial=0.0)):
        raise InfeasibleError("constraints are infeasible")
    # drive artificials out of the basis where possible
    for r in range(m):
        if basis[r] >= n + n_slack:
            col = next((j for j in range(n + n_slack) if abs(T[r, j]) > PIVOT_TOL), None)
            if col is not None:
                _pivot(T, basis, r, col)

    # phase 2
    T[-1, :] = 0.0
    T[-1, :n] = c
    for r in range(m):
        if basis[r] < n + n_slack and T[-1, basis[r]] != 0.0:
            T[-1] -= T[-1, basis[r]] * T[r]
    # artificial columns must stay out of the basis in phase 2
    _run(T, basis, n + n_slack)

    z = np.zeros(n + n_slack + m)
    for r, j in enumerate(basis):
        z[j] = T[r, -1]
    x = z[:n] + lo
    return LpResult(x=x, fun=float(c @ x))
