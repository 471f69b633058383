"""The Bayes-adaptive CVaR stochastic game.

Augmented states carry the MDP state, the belief (a sufficient statistic for
the history) and the adversary budget ``y``.  After the agent picks ``a`` the
adversary picks a perturbation ``xi`` of the posterior-predictive successor
probabilities ``p`` with ``0 <= xi <= 1/y`` and ``sum(xi * p) = 1``; the game
then moves to ``(s', b', y * xi(s'))`` with probability ``xi(s') * p(s')``.

Successor budgets are clamped to 1 (CVaR at levels >= 1 is the mean) and
successors whose perturbed probability is below ``ZERO_PROB`` are dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

ADMISSIBLE_TOL = 1e-9
ZERO_PROB = 1e-12
MAX_REJECTIONS = 1000

AGENT, ADVERSARY, CHANCE = "agent", "adversary", "chance"


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class AugState:
    s: int
    belief: object
    y: float
    turn: str = AGENT
    pending_action: Optional[int] = None
    t: int = 0

    def __post_init__(self):
        if not 0.0 < self.y <= 1.0:
            raise GameError(f"budget y must lie in (0, 1], got {self.y}")
        if (self.pending_action is None) != (self.turn == AGENT):
            raise GameError("pending_action must be set exactly on adversary/chance turns")


@dataclass(frozen=True)
class Perturbation:
    """Adversary action: one weight per supported successor."""

    successors: Tuple[int, ...]
    xi: np.ndarray

    def __getitem__(self, s_next: int) -> float:
        return float(self.xi[self.successors.index(s_next)])

    def as_dict(self) -> dict:
        return {int(s): float(x) for s, x in zip(self.successors, self.xi)}


def successors(aug: AugState, a: int, domain=None) -> List[Tuple[int, float]]:
    """Posterior-predictive successors ``(s', p)`` of the agent action ``a``."""
    if aug.turn != AGENT:
        raise GameError("successors() expects an agent-turn state")
    if domain is not None and a not in domain.legal_actions[aug.s]:
        raise GameError(f"action {a} is not legal in state {aug.s}")
    outs = aug.belief.predictive(aug.s, a)
    if not outs:
        raise GameError(f"action {a} is not legal in state {aug.s}")
    return [(t, p) for t, p, _ in outs]


def is_admissible(xi: Perturbation, aug: AugState, a: int) -> bool:
    base = aug if aug.turn == AGENT else replace(aug, turn=AGENT, pending_action=None)
    succ = dict(successors(base, a))
    if set(xi.successors) != set(succ):
        return False
    w = np.array([succ[s] for s in xi.successors])
    return envelope_ok(np.asarray(xi.xi, dtype=float), w, aug.y)


def envelope_ok(xi: np.ndarray, probs: np.ndarray, y: float, tol: float = ADMISSIBLE_TOL) -> bool:
    return bool(xi.min() >= -tol and xi.max() <= 1.0 / y + tol and abs(xi @ probs - 1.0) <= tol)


def perturbed_transition(aug: AugState, a: int, xi: Perturbation):
    """Distribution over successor agent states: ``[(AugState, prob, reward), ...]``."""
    base = replace(aug, turn=AGENT, pending_action=None)
    if not is_admissible(xi, base, a):
        raise GameError("perturbation is not admissible")
    outs = aug.belief.predictive(aug.s, a)
    weight = dict(zip(xi.successors, np.asarray(xi.xi, dtype=float)))
    dist = []
    for t, p, r in outs:
        q = weight[t] * p
        if q < ZERO_PROB:
            continue
        y2 = min(1.0, aug.y * weight[t])
        dist.append([AugState(t, aug.belief.update(aug.s, a, t), y2, AGENT, None, aug.t + 1), q, r])
    total = sum(d[1] for d in dist)
    for d in dist:
        d[1] /= total
    return [tuple(d) for d in dist]


# ---------------------------------------------------------------------------
# Perturbation sets


def sample_xi(probs: Sequence[float], y: float, rng) -> List[float]:
    """One admissible perturbation from a flat Dirichlet over perturbed probabilities.

    Draws ``q`` uniformly on the simplex, rejects until ``q <= p / y`` and
    returns ``q / p``.  Falls back to the identity after ``MAX_REJECTIONS``
    draws.  ``rng`` only needs a ``random()`` method, so both
    :class:`numpy.random.Generator` and :class:`random.Random` work.
    """
    k = len(probs)
    if k == 1 or y >= 1.0:
        return [1.0] * k
    caps = [p / y for p in probs]
    log = math.log
    for _ in range(MAX_REJECTIONS):
        e = [-log(1.0 - rng.random()) for _ in range(k)]
        tot = sum(e)
        q = [x / tot for x in e]
        if all(qi <= c for qi, c in zip(q, caps)):
            return [qi / p for qi, p in zip(q, probs)]
    return [1.0] * k


class PerturbationSpace:
    """``{x : 0 <= x <= upper, weights @ x = 1}`` with sampling helpers.

    For adversary actions ``weights`` are the predictive probabilities and
    ``upper = 1/y``; with unit weights and ``upper = 1`` it is the simplex.
    """

    def __init__(self, weights: Sequence[float], upper: float):
        self.w = np.asarray(weights, dtype=float)
        self.upper = float(upper)
        if self.w.min() <= 0:
            raise GameError("weights must be positive")
        if self.upper * self.w.sum() < 1.0 - ADMISSIBLE_TOL:
            raise GameError("empty perturbation set")

    @property
    def dim(self) -> int:
        return self.w.size

    @property
    def trivial(self) -> bool:
        """True when the identity is the only member (single successor or y = 1)."""
        return self.dim == 1 or self.upper * self.w.sum() <= 1.0 + ADMISSIBLE_TOL

    def identity(self) -> np.ndarray:
        return np.full(self.dim, 1.0 / self.w.sum())

    def contains(self, X: np.ndarray, tol: float = ADMISSIBLE_TOL) -> np.ndarray:
        X = np.atleast_2d(X)
        return (X.min(axis=1) >= -tol) & (X.max(axis=1) <= self.upper + tol) & (np.abs(X @ self.w - 1.0) <= tol)

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        """``n`` flat-Dirichlet draws of ``q = w * x`` restricted to the box."""
        if self.trivial:
            return np.tile(self.identity(), (n, 1))
        caps = self.w * self.upper
        out = np.empty((0, self.dim))
        tries = 0
        while out.shape[0] < n and tries < MAX_REJECTIONS:
            m = max(8, 2 * (n - out.shape[0]))
            q = rng.exponential(size=(m, self.dim))
            q /= q.sum(axis=1, keepdims=True)
            ok = np.all(q <= caps, axis=1)
            out = np.vstack([out, q[ok] / self.w])
            tries += m
        if out.shape[0] < n:
            out = np.vstack([out, np.tile(self.identity(), (n - out.shape[0], 1))])
        return out[:n]

    def vertices(self, rng: Optional[np.random.Generator] = None, max_vertices: int = 24) -> np.ndarray:
        """Vertices obtained by filling mass greedily in successor orders.

        All orders are used for up to four successors, otherwise a random
        subset of ``max_vertices`` orders.
        """
        from itertools import permutations

        k = self.dim
        if k <= 4 or rng is None:
            orders = list(permutations(range(k))) if k <= 4 else [tuple(range(k))]
        else:
            orders = [tuple(rng.permutation(k)) for _ in range(max_vertices)]
        caps = self.w * self.upper
        verts = set()
        for order in orders:
            q = np.zeros(k)
            left = 1.0
            for i in order:
                q[i] = min(caps[i], left)
                left -= q[i]
            verts.add(tuple(np.round(q / self.w, 15)))
        return np.array(sorted(verts))

    def jitter(self, x: np.ndarray, scale: float, n: int, rng: np.random.Generator) -> np.ndarray:
        """Gaussian moves around ``x`` projected onto the hyperplane, kept if feasible."""
        d = rng.normal(scale=scale, size=(n, self.dim))
        d -= np.outer(d @ self.w, self.w) / (self.w @ self.w)
        X = x[None, :] + d
        return X[self.contains(X)]


def random_perturbation(aug: AugState, a: int, rng) -> Perturbation:
    """Flat-Dirichlet admissible perturbation for the adversary turn after ``a``."""
    base = replace(aug, turn=AGENT, pending_action=None) if aug.turn != AGENT else aug
    succ = successors(base, a)
    xi = sample_xi([p for _, p in succ], aug.y, rng)
    return Perturbation(tuple(s for s, _ in succ), np.asarray(xi))
