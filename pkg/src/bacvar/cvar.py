"""VaR / CVaR estimators and the CVaR dual over the risk envelope.

Conventions: returns are rewards (larger is better) and CVaR at level alpha
is the mean of the worst alpha-fraction.  The envelope at level alpha with
reference probabilities ``p`` is ``{xi : 0 <= xi <= 1/alpha, sum(xi * p) = 1}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from bacvar import lp

DIST_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteDistribution:
    values: np.ndarray
    probs: np.ndarray

    def __init__(self, values: Sequence[float], probs: Sequence[float]):
        v = np.asarray(values, dtype=float)
        p = np.asarray(probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1 or v.size == 0:
            raise ValueError("values and probs must be nonempty 1-d arrays of equal length")
        if p.min() < 0 or abs(p.sum() - 1.0) > DIST_TOL:
            raise ValueError(f"probs must be nonnegative and sum to 1 (sum={p.sum():.12g})")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @property
    def mean(self) -> float:
        return float(self.values @ self.probs)


@dataclass(frozen=True)
class EnvelopeWeights:
    xi: np.ndarray
    alpha: float

    def violations(self, probs: Sequence[float], tol: float = DIST_TOL) -> list:
        out = []
        xi = np.asarray(self.xi)
        if xi.min() < -tol:
            out.append(f"negative weight {xi.min():.3g}")
        if xi.max() > 1.0 / self.alpha + tol:
            out.append(f"weight {xi.max():.6g} exceeds 1/alpha = {1 / self.alpha:.6g}")
        total = float(xi @ np.asarray(probs))
        if abs(total - 1.0) > tol:
            out.append(f"weighted mass {total:.12g} != 1")
        return out


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


def tail_size(n: int, alpha: float) -> int:
    """``ceil(alpha * n)`` with round-off guarding (0.03 * 2000 is 60, not 61)."""
    return max(1, math.ceil(alpha * n - 1e-9))


def empirical_var(samples: Sequence[float], alpha: float) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    _check_alpha(alpha)
    k = tail_size(x.size, alpha)
    return float(np.partition(x, k - 1)[k - 1])


def empirical_cvar(samples: Sequence[float], alpha: float) -> float:
    """Mean of the ``ceil(alpha * N)`` smallest samples."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    _check_alpha(alpha)
    k = tail_size(x.size, alpha)
    return float(np.sort(x)[:k].mean())


def cvar_standard_error(samples: Sequence[float], alpha: float) -> float:
    """Standard deviation of the tail samples over ``sqrt(tail size)``."""
    x = np.sort(np.asarray(samples, dtype=float))
    k = tail_size(x.size, alpha)
    tail = x[:k]
    return float(tail.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0


def min_over_envelope(dist: DiscreteDistribution, alpha: float, values=None) -> Tuple[float, EnvelopeWeights]:
    """Minimise ``sum(xi * p * values)`` over the envelope by greedy filling.

    The worst outcomes get weight ``1/alpha`` until mass ``alpha`` of the
    reference distribution is used; the boundary outcome gets the remainder.
    Ties in value are broken by outcome index.
    """
    _check_alpha(alpha)
    p = dist.probs
    v = dist.values if values is None else np.asarray(values, dtype=float)
    if v.shape != p.shape:
        raise ValueError("one value per outcome is required")
    xi = np.zeros_like(p)
    remaining = 1.0
    cap = 1.0 / alpha
    for i in np.argsort(v, kind="stable"):
        if remaining <= 0.0:
            break
        if p[i] <= 0.0:
            continue
        take = min(cap * p[i], remaining)
        xi[i] = take / p[i]
        remaining -= take
    if remaining > 1e-12:
        # alpha = 1 round-off: spread what is left over the support
        xi[p > 0] += remaining
    return float(np.sum(xi * p * v)), EnvelopeWeights(xi, alpha)


def exact_cvar(dist: DiscreteDistribution, alpha: float) -> float:
    return min_over_envelope(dist, alpha)[0]


def lp_envelope_min(dist: DiscreteDistribution, alpha: float, values=None) -> Tuple[float, np.ndarray]:
    """The same envelope minimum solved as a linear program."""
    _check_alpha(alpha)
    p = dist.probs
    v = dist.values if values is None else np.asarray(values, dtype=float)
    res = lp.linprog(p * v, A_eq=p[None, :], b_eq=[1.0], bounds=[(0.0, 1.0 / alpha)] * p.size)
    return res.fun, res.x
