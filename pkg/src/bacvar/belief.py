"""Posterior beliefs over unknown transition functions.

:class:`Belief` is the conjugate (Beta / Dirichlet per parameter group)
posterior of a :class:`~bacvar.mdp.ParametricDomain`, represented by outcome
counts.  :class:`FiniteModelBelief` is a posterior over a finite set of
candidate MDPs; it backs the small exhaustively-checked instances.

Both expose the same small surface used by the planners: ``predictive(s, a)``
(the posterior-predictive successor list), ``update(s, a, s')`` and ``key``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from bacvar.mdp import MdpError, MdpSpec, Outcome, ParametricDomain


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass(frozen=True)
class DirichletParams:
    concentration: Tuple[float, ...]

    def __post_init__(self):
        if not self.concentration or min(self.concentration) <= 0:
            raise ValueError(f"Dirichlet concentrations must be positive, got {self.concentration}")

    @property
    def mean(self) -> np.ndarray:
        c = np.asarray(self.concentration, dtype=float)
        return c / c.sum()


@dataclass(frozen=True, eq=False)
class Belief:
    """Conjugate posterior: prior concentrations plus observed outcome counts."""

    domain: ParametricDomain
    counts: Tuple[Tuple[int, ...], ...]

    @classmethod
    def from_prior(cls, domain: ParametricDomain) -> "Belief":
        return cls(domain, tuple((0,) * len(c) for c in domain.prior))

    @property
    def key(self) -> Tuple[Tuple[int, ...], ...]:
        return self.counts

    def __eq__(self, other):
        return isinstance(other, Belief) and self.domain is other.domain and self.counts == other.counts

    def __hash__(self):
        return hash(self.counts)

    def concentration(self, group: int) -> np.ndarray:
        return np.asarray(self.domain.prior[group], dtype=float) + np.asarray(self.counts[group])

    def params(self, group: int):
        """Posterior as :class:`BetaParams` (two outcomes) or :class:`DirichletParams`."""
        c = tuple(float(x) for x in self.concentration(group))
        return BetaParams(*c) if len(c) == 2 else DirichletParams(c)

    def update(self, s: int, a: int, s_next: int) -> "Belief":
        b = self.domain.lookup(s, a, s_next)
        if b.group is None:
            return self
        counts = list(self.counts)
        row = list(counts[b.group])
        row[b.outcome] += 1
        counts[b.group] = tuple(row)
        return Belief(self.domain, tuple(counts))

    def predictive(self, s: int, a: int) -> Tuple[Outcome, ...]:
        """Posterior-mean successors ``((s', p, r), ...)`` of ``(s, a)``."""
        prior, counts = self.domain.prior, self.counts
        out = []
        for b in self.domain.branches[s][a]:
            if b.group is None:
                p = b.prob
            else:
                g = b.group
                p = b.prob * (prior[g][b.outcome] + counts[g][b.outcome]) / (sum(prior[g]) + sum(counts[g]))
            out.append((b.next_state, p, b.reward))
        return tuple(out)

    def predictive_prob(self, s: int, a: int, s_next: int) -> float:
        return sum(p for t, p, _ in self.predictive(s, a) if t == s_next)

    def mean_theta(self):
        return [self.concentration(g) / self.concentration(g).sum() for g in range(self.domain.num_groups)]

    def sample_theta(self, rng: np.random.Generator):
        return [rng.dirichlet(self.concentration(g)) for g in range(self.domain.num_groups)]

    def sample_transition_fn(self, rng: np.random.Generator) -> MdpSpec:
        return self.domain.instantiate(self.sample_theta(rng))

    def expected_mdp(self) -> MdpSpec:
        return self.domain.instantiate(self.mean_theta())


class FiniteModelBelief:
    """Posterior over a finite set of MDPs sharing states, actions and rewards."""

    __slots__ = ("models", "weights")

    def __init__(self, models: Sequence[MdpSpec], weights: Sequence[float]):
        w = np.asarray(weights, dtype=float)
        if len(models) != len(w) or w.min() < 0 or w.sum() <= 0:
            raise ValueError("need one nonnegative weight per model")
        self.models = tuple(models)
        self.weights = tuple(float(x) for x in w / w.sum())

    @property
    def key(self) -> Tuple[float, ...]:
        return tuple(round(w, 12) for w in self.weights)

    def __eq__(self, other):
        return isinstance(other, FiniteModelBelief) and self.models is other.models and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def update(self, s: int, a: int, s_next: int) -> "FiniteModelBelief":
        w = [wm * m.transition(s, a, s_next) for wm, m in zip(self.weights, self.models)]
        if sum(w) <= 0:
            raise MdpError(f"transition ({s}, {a}, {s_next}) has zero likelihood under every model")
        return FiniteModelBelief(self.models, w)

    def predictive(self, s: int, a: int) -> Tuple[Outcome, ...]:
        probs: dict = {}
        rewards: dict = {}
        for wm, m in zip(self.weights, self.models):
            for t, p, r in m.outcomes[s][a]:
                probs[t] = probs.get(t, 0.0) + wm * p
                rewards.setdefault(t, r)
        return tuple((t, p, rewards[t]) for t, p in probs.items() if p > 0)

    def predictive_prob(self, s: int, a: int, s_next: int) -> float:
        return sum(p for t, p, _ in self.predictive(s, a) if t == s_next)

    def sample_transition_fn(self, rng: np.random.Generator) -> MdpSpec:
        return self.models[rng.choice(len(self.models), p=self.weights)]


def update(b, s: int, a: int, s_next: int):
    return b.update(s, a, s_next)


def predictive_prob(b, s: int, a: int, s_next: int) -> float:
    return b.predictive_prob(s, a, s_next)


def sample_transition_fn(b, rng: np.random.Generator) -> MdpSpec:
    return b.sample_transition_fn(rng)


def expected_mdp(b: Belief) -> MdpSpec:
    return b.expected_mdp()
