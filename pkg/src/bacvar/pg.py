"""CVaR policy gradient over a particle belief.

The belief is a weight vector ``z`` over ``M`` transition models drawn from
the prior once per training run.  The policy is a softmax over
``F(h, s, a) = z(h) @ W[:, s, a]``, i.e. a one-hot state-action feature per
model.  Gradients use the likelihood-ratio CVaR estimator: only episodes in
the empirical alpha-tail contribute, weighted by their shortfall below the
empirical VaR.

Episodes of a minibatch are simulated together as numpy arrays.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from bacvar.belief import Belief
from bacvar.cvar import cvar_standard_error, empirical_cvar, empirical_var
from bacvar.mdp import ParametricDomain, TrajectoryRecord

logger = logging.getLogger(__name__)

NUM_PARTICLES = 25
LEARNING_RATES = (0.01, 0.001, 0.0001)


class TrainingDiverged(RuntimeError):
    pass


def pad_theta(theta: Sequence[Sequence[float]], num_outcomes: int) -> np.ndarray:
    out = np.zeros((len(theta), num_outcomes))
    for g, row in enumerate(theta):
        out[g, :len(row)] = row
    return out


@dataclass(frozen=True)
class ParticleBelief:
    """Weights over a fixed set of models; ``models[m, g, o]`` is ``theta_m``."""

    models: np.ndarray
    weights: np.ndarray

    @classmethod
    def uniform(cls, models: np.ndarray) -> "ParticleBelief":
        m = len(models)
        return cls(np.asarray(models, dtype=float), np.full(m, 1.0 / m))

    @classmethod
    def from_prior(cls, domain: ParametricDomain, rng: np.random.Generator,
                   num_particles: int = NUM_PARTICLES) -> "ParticleBelief":
        return cls.uniform(sample_models(domain, rng, num_particles))


def sample_models(domain: ParametricDomain, rng: np.random.Generator, n: int) -> np.ndarray:
    width = max(len(c) for c in domain.prior) if domain.prior else 1
    prior = Belief.from_prior(domain)
    return np.stack([pad_theta(prior.sample_theta(rng), width) for _ in range(n)]) if domain.prior \
        else np.ones((n, 0, width))


def likelihoods(domain: ParametricDomain, models: np.ndarray, s: int, a: int, s_next: int) -> np.ndarray:
    b = domain.lookup(s, a, s_next)
    if b.group is None:
        return np.full(len(models), b.prob)
    return b.prob * models[:, b.group, b.outcome]


def _normalise(z: np.ndarray) -> np.ndarray:
    total = z.sum(axis=-1, keepdims=True)
    bad = total[..., 0] <= 0
    if np.any(bad):
        logger.warning("particle weights degenerated in %d belief(s); resetting to uniform", int(bad.sum()))
        z = np.where(bad[..., None], 1.0, z)
        total = z.sum(axis=-1, keepdims=True)
    return z / total


def particle_update(pb: ParticleBelief, domain: ParametricDomain, s: int, a: int, s_next: int) -> ParticleBelief:
    """Reweight by each model's probability of ``s -> s_next`` and renormalise."""
    z = pb.weights * likelihoods(domain, pb.models, s, a, s_next)
    return replace(pb, weights=_normalise(z))


@dataclass
class PolicyParams:
    W: np.ndarray                 # (models, states, actions)
    learning_rate: float = 0.001
    minibatch_size: int = 1000

    def __post_init__(self):
        if not np.all(np.isfinite(self.W)):
            raise TrainingDiverged("policy parameters contain non-finite entries")

    @classmethod
    def zeros(cls, domain: ParametricDomain, num_particles: int = NUM_PARTICLES, **kw) -> "PolicyParams":
        return cls(np.zeros((num_particles, domain.num_states, domain.num_actions)), **kw)


def legal_mask(domain: ParametricDomain) -> np.ndarray:
    mask = np.zeros((domain.num_states, domain.num_actions), dtype=bool)
    for s, acts in enumerate(domain.legal_actions):
        mask[s, list(acts)] = True
    return mask


def softmax_rows(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    x = np.where(mask, logits, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(x), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def action_probs(pb: ParticleBelief, s: int, params: PolicyParams, domain: ParametricDomain) -> np.ndarray:
    """Softmax policy over the legal actions of ``s`` (zeros for illegal ones)."""
    logits = pb.weights @ params.W[:, s, :]
    mask = np.zeros(params.W.shape[2], dtype=bool)
    mask[list(domain.legal_actions[s])] = True
    return softmax_rows(logits, mask)


def init_from_policy(domain: ParametricDomain, choose, num_particles: int = NUM_PARTICLES,
                     **kw) -> PolicyParams:
    """``W = 2`` for the action ``choose(s)`` and ``1`` elsewhere, for every model."""
    W = np.ones((num_particles, domain.num_states, domain.num_actions))
    for s in range(domain.num_states):
        a = choose(s)
        if a is not None:
            W[:, s, a] = 2.0
    return PolicyParams(W, **kw)


def init_from_vi(domain: ParametricDomain, alpha: float, num_particles: int = NUM_PARTICLES, **kw) -> PolicyParams:
    """Initial parameters from the CVaR VI expected-MDP policy at budget ``alpha``.

    Each state uses the decision of the earliest stage at which it is reachable.
    """
    from bacvar import vi

    table = vi.solve_mdp(Belief.from_prior(domain).expected_mdp(), alpha)
    first = {}
    for (t, s) in sorted(table.decisions, key=lambda k: k[0]):
        first.setdefault(s, t)
    return init_from_policy(domain, lambda s: table.action(first[s], s, alpha) if s in first else None,
                            num_particles, **kw)


def cvar_gradient(returns: np.ndarray, score: np.ndarray, alpha: float) -> np.ndarray:
    """Likelihood-ratio CVaR gradient.

    ``score[i]`` is the gradient of the log-probability of trajectory ``i``
    (any shape after the first axis).
    """
    returns = np.asarray(returns, dtype=float)
    n = returns.size
    if n < math.ceil(1.0 / alpha - 1e-9):
        raise ValueError(f"minibatch of {n} is too small for alpha = {alpha}; need >= ceil(1/alpha)")
    v = empirical_var(returns, alpha)
    w = np.where(returns <= v, returns - v, 0.0)
    return np.tensordot(w, score, axes=(0, 0)) / (alpha * n)


# ---------------------------------------------------------------------------
# Vectorised simulation


class BatchSimulator:
    """Dense tables of ``(s, a)`` branches for simulating many episodes at once."""

    def __init__(self, domain: ParametricDomain):
        self.domain = domain
        S, A = domain.num_states, domain.num_actions
        B = max((len(domain.branches[s][a]) for s in range(S) for a in range(A)), default=1)
        self.next_state = np.zeros((S, A, B), dtype=np.int64)
        self.reward = np.zeros((S, A, B))
        self.group = np.full((S, A, B), -1, dtype=np.int64)
        self.outcome = np.zeros((S, A, B), dtype=np.int64)
        self.fixed = np.zeros((S, A, B))
        for s in range(S):
            for a in range(A):
                for k, br in enumerate(domain.branches[s][a]):
                    self.next_state[s, a, k] = br.next_state
                    self.reward[s, a, k] = br.reward
                    self.group[s, a, k] = -1 if br.group is None else br.group
                    self.outcome[s, a, k] = br.outcome
                    self.fixed[s, a, k] = br.prob
        self.mask = legal_mask(domain)
        self.terminal = np.zeros(S, dtype=bool)
        self.terminal[list(domain.terminal)] = True

    def branch_probs(self, thetas: np.ndarray, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """``(n, B)`` branch probabilities; ``thetas`` is ``(n, G, O)``."""
        g = self.group[s, a]
        o = self.outcome[s, a]
        known = g < 0
        n = len(s)
        th = thetas[np.arange(n)[:, None], np.maximum(g, 0), o] if thetas.shape[1] else np.ones(g.shape)
        return self.fixed[s, a] * np.where(known, 1.0, th)

    def run(self, params: PolicyParams, models: np.ndarray, thetas: np.ndarray, rng: np.random.Generator,
            record: bool = False):
        """Simulate ``len(thetas)`` episodes; optionally record what the gradient needs."""
        W = params.W
        n = len(thetas)
        M = models.shape[0]
        s = np.full(n, self.domain.initial_state, dtype=np.int64)
        z = np.full((n, M), 1.0 / M)
        ret = np.zeros(n)
        alive = ~self.terminal[s]
        trace = []
        rows = np.arange(n)
        for _ in range(self.domain.horizon):
            if not alive.any():
                break
            logits = np.einsum("nm,mna->na", z, W[:, s, :])
            probs = softmax_rows(logits, self.mask[s])
            u = rng.random(n)
            a = np.minimum((probs.cumsum(axis=1) <= u[:, None]).sum(axis=1), W.shape[2] - 1)
            # numerical edge: never pick an illegal action
            bad = ~self.mask[s, a]
            if bad.any():
                a[bad] = probs[bad].argmax(axis=1)
            if record:
                trace.append((s.copy(), a.copy(), z.copy(), probs, alive.copy()))
            bp = self.branch_probs(thetas, s, a)
            u = rng.random(n) * bp.sum(axis=1)
            k = np.minimum((bp.cumsum(axis=1) <= u[:, None]).sum(axis=1), bp.shape[1] - 1)
            s2 = self.next_state[s, a, k]
            ret += np.where(alive, self.reward[s, a, k], 0.0)
            # particle reweighting
            g = self.group[s, a, k]
            o = self.outcome[s, a, k]
            lik = np.where((g >= 0)[:, None], models[:, np.maximum(g, 0), o].T if models.shape[1] else 1.0, 1.0)
            z = np.where(alive[:, None], _normalise(z * lik), z)
            s = np.where(alive, s2, s)
            alive = alive & ~self.terminal[s]
        return ret, trace


def score_gradient(trace, weights: np.ndarray, shape) -> np.ndarray:
    """``sum_i weights[i] * grad log P(traj_i)`` accumulated from a recorded trace."""
    M, S, A = shape
    G = np.zeros((S, M, A))
    for s, a, z, probs, alive in trace:
        w = weights * alive
        keep = w != 0
        if not keep.any():
            continue
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(a)), a] = 1.0
        contrib = (w[keep, None, None] * z[keep, :, None]) * (onehot[keep] - probs[keep])[:, None, :]
        np.add.at(G, s[keep], contrib)
    return G.transpose(1, 0, 2)


@dataclass
class TrainingCurve:
    sims: List[int] = field(default_factory=list)
    cvar: List[float] = field(default_factory=list)
    se: List[float] = field(default_factory=list)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sims", "cvar", "se"])
            for row in zip(self.sims, self.cvar, self.se):
                w.writerow(row)


def sample_thetas(domain: ParametricDomain, rng: np.random.Generator, n: int) -> np.ndarray:
    return sample_models(domain, rng, n)


def evaluate(domain: ParametricDomain, params: PolicyParams, models: np.ndarray, alpha: float,
             rng: np.random.Generator, episodes: int = 2000, sim: Optional[BatchSimulator] = None):
    sim = sim or BatchSimulator(domain)
    ret, _ = sim.run(params, models, sample_thetas(domain, rng, episodes), rng)
    return empirical_cvar(ret, alpha), cvar_standard_error(ret, alpha)


def train(domain: ParametricDomain, alpha: float, params: PolicyParams, total_sims: int = 2_000_000,
          rng: Optional[np.random.Generator] = None, eval_every: int = 20_000, eval_episodes: int = 2000,
          models: Optional[np.ndarray] = None, num_particles: Optional[int] = None,
          curve_path: Optional[str] = None) -> Tuple[PolicyParams, TrainingCurve, np.ndarray]:
    """Minibatch gradient ascent on the empirical CVaR.

    Each training episode runs in a model drawn from the prior.  Returns the
    final parameters, the evaluation curve and the particle models.
    """
    rng = rng or np.random.default_rng()
    if models is None:
        models = sample_models(domain, rng, num_particles or params.W.shape[0])
    if models.shape[0] != params.W.shape[0]:
        raise ValueError("one row of W per particle model is required")
    sim = BatchSimulator(domain)
    curve = TrainingCurve()
    W = params.W.copy()
    cur = replace(params, W=W)
    done = 0
    next_eval = 0
    while True:
        if eval_every and done >= next_eval:
            c, se = evaluate(domain, cur, models, alpha, rng, eval_episodes, sim)
            curve.sims.append(done)
            curve.cvar.append(c)
            curve.se.append(se)
            next_eval += eval_every
        if done >= total_sims:
            break
        n = min(params.minibatch_size, total_sims - done)
        if n < math.ceil(1.0 / alpha - 1e-9):
            break
        thetas = sample_thetas(domain, rng, n)
        ret, trace = sim.run(cur, models, thetas, rng, record=True)
        v = empirical_var(ret, alpha)
        w = np.where(ret <= v, ret - v, 0.0) / (alpha * n)
        grad = score_gradient(trace, w, W.shape)
        W = W + params.learning_rate * grad
        if not np.all(np.isfinite(W)):
            raise TrainingDiverged(f"non-finite parameters after {done + n} simulations "
                                   f"(max |grad| = {np.nanmax(np.abs(grad)):.3g})")
        cur = replace(params, W=W)
        done += n
    if curve_path:
        curve.write_csv(curve_path)
    return cur, curve, models


def act_episode(domain: ParametricDomain, params: PolicyParams, models: np.ndarray, theta,
                rng: np.random.Generator) -> TrajectoryRecord:
    """Run the stochastic policy once in the ground truth ``theta``."""
    pb = ParticleBelief.uniform(models)
    traj = TrajectoryRecord()
    s = domain.initial_state
    for _ in range(domain.horizon):
        if domain.is_terminal(s):
            break
        p = action_probs(pb, s, params, domain)
        a = int(rng.choice(len(p), p=p))
        s2, r = domain.step(theta, s, a, rng)
        traj.append(s, a, s2, r)
        pb = particle_update(pb, domain, s, a, s2)
        s = s2
    return traj
