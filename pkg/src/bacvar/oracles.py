"""Brute-force reference computations for small instances.

These routes are deliberately independent of the production solvers: the
envelope minimum by dynamic programming over a mass grid, the game value by
grid search over adversary moves, the optimal CVaR by enumerating policies,
and the perturbed-prior value by nested grids over prior and transition
perturbations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from bacvar.belief import FiniteModelBelief
from bacvar.cvar import DiscreteDistribution, exact_cvar
from bacvar.mdp import MdpSpec


def grid_envelope_min(values: Sequence[float], probs: Sequence[float], alpha: float,
                      resolution: float = 1e-3) -> float:
    """``min sum(q * v)`` over perturbed masses ``q`` on a grid of step ``resolution``.

    ``q_i = xi_i * p_i`` ranges over multiples of ``resolution`` with
    ``q_i <= p_i / alpha`` and ``sum(q) = 1``; a min-plus recursion over
    outcomes enumerates every such grid point.
    """
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    units = int(round(1.0 / resolution))
    grid = np.arange(units + 1) * resolution
    # best[u] = least cost of placing u units on the outcomes seen so far
    best = np.full(units + 1, np.inf)
    best[0] = 0.0
    for vi, pi in zip(v, p):
        cap = min(units, int(np.floor(pi / alpha / resolution + 1e-9)))
        cost = np.where(np.arange(units + 1) <= cap, grid * vi, np.inf)
        nxt = np.full(units + 1, np.inf)
        for u in range(cap + 1):
            cand = best[: units + 1 - u] + cost[u]
            np.minimum(nxt[u:], cand, out=nxt[u:])
        best = nxt
    return float(best[units])


# ---------------------------------------------------------------------------
# Micro-instance: two states, two actions, horizon two, two candidate models


@dataclass
class MicroInstance:
    models: Tuple[MdpSpec, MdpSpec]
    prior: Tuple[float, float]
    alpha: float

    @property
    def belief(self) -> FiniteModelBelief:
        return FiniteModelBelief(self.models, self.prior)


def _mdp(p_stay: Sequence[Sequence[float]], rewards) -> MdpSpec:
    outcomes = []
    for s in range(2):
        row = []
        for a in range(2):
            q = p_stay[s][a]
            outs = [(s, q, rewards[s][a][s]), (1 - s, 1.0 - q, rewards[s][a][1 - s])]
            row.append(tuple(o for o in outs if o[1] > 0))
        outcomes.append(tuple(row))
    return MdpSpec(2, 2, ((0, 1), (0, 1)), tuple(outcomes), horizon=2, initial_state=0)


def micro_instance(alpha: float = 0.25) -> MicroInstance:
    """Risky action 1 pays well in one model and badly in the other."""
    rewards = (((1.0, 0.0), (2.0, 0.0)), ((0.0, 1.5), (0.5, 3.0)))
    m1 = _mdp(((0.9, 0.8), (0.5, 0.3)), rewards)
    m2 = _mdp(((0.9, 0.2), (0.5, 0.7)), rewards)
    return MicroInstance((m1, m2), (0.6, 0.4), alpha)


def enumerate_policies(spec: MdpSpec) -> List[Tuple[int, Dict[int, int]]]:
    """Deterministic history-dependent policies for a horizon-two MDP from its start state.

    A policy is ``(a0, {s1: a1})``; with ``a0`` fixed the history at stage
    one is determined by ``s1``.
    """
    s0 = spec.initial_state
    pols = []
    for a0 in spec.legal_actions[s0]:
        succ = sorted({t for t, _, _ in spec.outcomes[s0][a0]})
        for a1s in itertools.product(*(spec.legal_actions[s] for s in succ)):
            pols.append((a0, dict(zip(succ, a1s))))
    return pols


def bamdp_return_distribution(belief, s0: int, policy) -> DiscreteDistribution:
    a0, rule = policy
    vals, probs = [], []
    for s1, p1, r1 in belief.predictive(s0, a0):
        b1 = belief.update(s0, a0, s1)
        a1 = rule[s1]
        for s2, p2, r2 in b1.predictive(s1, a1):
            vals.append(r1 + r2)
            probs.append(p1 * p2)
    return DiscreteDistribution(vals, probs)


def brute_force_cvar(inst: MicroInstance):
    """Best CVaR over all enumerated policies: ``(value, policy)``."""
    spec = inst.models[0]
    best = None
    for pol in enumerate_policies(spec):
        c = exact_cvar(bamdp_return_distribution(inst.belief, spec.initial_state, pol), inst.alpha)
        if best is None or c > best[0]:
            best = (c, pol)
    return best


def _two_point_grid(p: Sequence[float], y: float, n: int) -> np.ndarray:
    """Grid of perturbed masses ``q`` for one or two successors."""
    if len(p) == 1:
        return np.ones((1, 1))
    if len(p) != 2:
        raise ValueError("grid game solver handles at most two successors")
    lo = max(0.0, 1.0 - p[1] / y)
    hi = min(1.0, p[0] / y)
    q1 = np.linspace(lo, hi, n)
    return np.stack([q1, 1.0 - q1], axis=1)


def game_value_grid(belief, s: int, y: float, horizon: int, legal, t: int = 0, n: int = 801) -> float:
    """Maximin value of the perturbation game with adversary moves on a grid."""
    if t >= horizon:
        return 0.0
    best = -np.inf
    for a in legal[s]:
        outs = belief.predictive(s, a)
        p = [o[1] for o in outs]
        Q = _two_point_grid(p, y, n)
        total = np.zeros(len(Q))
        for i, (s2, pi, r) in enumerate(outs):
            b2 = belief.update(s, a, s2)
            qi = Q[:, i]
            cont = np.zeros(len(Q))
            if t + 1 < horizon:
                # continuation depends on the successor budget; evaluate once per distinct value
                ys = np.minimum(1.0, y * qi / pi)
                for j, (qq, yy) in enumerate(zip(qi, ys)):
                    if qq > 0:
                        cont[j] = game_value_grid(b2, s2, yy, horizon, legal, t + 1, n)
            total += qi * (r + cont)
        best = max(best, float(total.min()))
    return best


def micro_game_value(inst: MicroInstance, n: int = 801) -> float:
    spec = inst.models[0]
    return game_value_grid(inst.belief, spec.initial_state, inst.alpha, spec.horizon, spec.legal_actions, 0, n)


def _envelope_grid(p: Sequence[float], cap: np.ndarray, n: int) -> np.ndarray:
    """Rows of two-successor masses ``q`` with ``q_i <= p_i * cap`` for each cap (broadcast).

    Returns ``(len(cap), n, 2)``; caps that make the set empty are not
    expected (the identity is always feasible for ``cap >= 1``).
    """
    cap = np.atleast_1d(cap)
    if len(p) == 1:
        return np.ones((len(cap), 1, 1))
    lo = np.maximum(0.0, 1.0 - p[1] * cap)
    hi = np.minimum(1.0, p[0] * cap)
    u = np.linspace(0.0, 1.0, n)
    q1 = lo[:, None] + (hi - lo)[:, None] * u[None, :]
    return np.stack([q1, 1.0 - q1], axis=2)


def perturbed_prior_value(inst: MicroInstance, policy, n: int = 201) -> float:
    """Minimum expected return over prior and per-model transition perturbations.

    The prior weight ``delta`` and the step perturbations ``xi0, xi1`` of the
    chosen model satisfy ``0 <= delta * xi0 * xi1 <= 1/alpha``; each factor
    also normalises under its own reference distribution.  All three are
    searched on grids.
    """
    a0, rule = policy
    s0 = inst.models[0].initial_state
    inv = 1.0 / inst.alpha
    w = np.asarray(inst.prior)
    D = _envelope_grid(list(w), np.array([inv]), n)[0]           # (n, 2) prior masses
    best = np.inf
    for d_row in D:
        total = 0.0
        for m, model in enumerate(inst.models):
            if d_row[m] == 0:
                continue
            delta = d_row[m] / w[m]
            total += d_row[m] * _model_min(model, s0, a0, rule, inv / delta, n)
        best = min(best, total)
    return float(best)


def _model_min(model: MdpSpec, s0, a0, rule, cap0: float, n: int) -> float:
    """Min expected two-step return in one model with path weights capped by ``cap0``."""
    outs0 = model.outcomes[s0][a0]
    p0 = [o[1] for o in outs0]
    Q0 = _envelope_grid(p0, np.array([cap0]), n)[0]              # (n, k0)
    total = np.zeros(len(Q0))
    for i, (s1, p1, r1) in enumerate(outs0):
        q = Q0[:, i]
        xi0 = q / p1
        outs1 = model.outcomes[s1][rule[s1]]
        p_next = [o[1] for o in outs1]
        r_next = np.array([o[2] for o in outs1])
        # second-step caps cap0 / xi0 (unbounded when xi0 = 0: any normalised xi1 works)
        cap1 = np.where(xi0 > 0, cap0 / np.maximum(xi0, 1e-300), 1e300)
        Q1 = _envelope_grid(p_next, cap1, n)                     # (n, n, k1)
        step = (Q1 * r_next[None, None, :]).sum(axis=2).min(axis=1)
        total += q * (r1 + step)
    return float(total.min())


def micro_check(alpha: float = 0.25, n_game: int = 801, n_prior: int = 201) -> Dict[str, float]:
    """All three routes on the micro-instance."""
    inst = micro_instance(alpha)
    brute, pol = brute_force_cvar(inst)
    game = micro_game_value(inst, n_game)
    prior = max(perturbed_prior_value(inst, p, n_prior) for p in enumerate_policies(inst.models[0]))
    return {"alpha": alpha, "game_value": game, "brute_force_cvar": brute, "perturbed_prior_value": prior,
            "best_policy_a0": pol[0], "max_abs_gap": max(abs(game - brute), abs(prior - brute), abs(game - prior))}
