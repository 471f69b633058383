"""Approximate CVaR value iteration over a confidence grid.

``V_t(x, y)`` is stored at the grid points ``y_j``.  For the inner
minimisation the function ``g(z) = z * V(x', z)`` is interpolated linearly
between grid points (and through ``g(0) = 0``), which makes the inner problem
a linear program over segment variables: successor ``i`` offers segment
``j`` of length ``z_j - z_{j-1}`` at unit cost equal to the segment slope,
and the adversary buys ``sum_i p_i z_i = y`` units of mass.  That program is a
fractional knapsack, so filling the cheapest segments first solves it
exactly.

The same backward induction runs on a plain MDP (``MdpModel``, e.g. the
expected MDP) or on the reachable part of a Bayes-adaptive MDP with
count-keyed beliefs (``BamdpModel``).
"""
from __future__ import annotations

import ast
import bisect
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from bacvar.belief import Belief
from bacvar.mdp import MdpSpec, ParametricDomain, TrajectoryRecord

logger = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 20
LINEAR_YV, LINEAR_V = "linear_yv", "linear_v"
Y_FLOOR = 1e-6  # budgets are kept strictly positive when a realised successor had xi = 0


class StateSpaceTooLarge(RuntimeError):
    pass


def make_grid(alpha: float, num_points: int = DEFAULT_GRID_POINTS, span: float = 10.0) -> np.ndarray:
    """``num_points`` log-spaced levels on ``[alpha/span, 1]`` plus ``alpha`` itself."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    pts = np.geomspace(alpha / span, 1.0, num_points)
    pts[-1] = 1.0
    if not np.any(np.isclose(pts, alpha, rtol=1e-12, atol=0.0)):
        pts = np.sort(np.append(pts, alpha))
    return pts


def _segments(cont: np.ndarray, grid: np.ndarray, mode: str) -> Tuple[np.ndarray, np.ndarray]:
    """Segment slopes and lengths of ``g(z) = z * V(z)`` per successor.

    ``cont`` is ``(k, G)``: the continuation values on the grid.
    """
    if mode == LINEAR_YV:
        z = np.concatenate([[0.0], grid])
        g = np.concatenate([np.zeros((cont.shape[0], 1)), cont * grid[None, :]], axis=1)
    elif mode == LINEAR_V:
        # g(z) = z * V_lin(z) is quadratic between nodes; sample it finely
        sub = 8
        z = [0.0]
        vals = [cont[:, :1]]
        for j in range(len(grid)):
            lo = 0.0 if j == 0 else grid[j - 1]
            for m in range(1, sub + 1):
                zz = lo + (grid[j] - lo) * m / sub
                z.append(zz)
                if j == 0:
                    vals.append(cont[:, :1])
                else:
                    w = m / sub
                    vals.append(((1 - w) * cont[:, j - 1] + w * cont[:, j])[:, None])
        z = np.asarray(z)
        g = np.hstack(vals) * z[None, :]
        g[:, 0] = 0.0
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    dz = np.diff(z)
    slopes = np.diff(g, axis=1) / dz[None, :]
    return slopes, dz


def inner_min_batch(probs: np.ndarray, cont: np.ndarray, ys: np.ndarray, grid: np.ndarray,
                    mode: str = LINEAR_YV) -> Tuple[np.ndarray, np.ndarray]:
    """Inner minimisation for several budgets at once.

    Returns ``values`` of shape ``(len(ys),)`` and the minimising ``xi`` of
    shape ``(len(ys), k)``.
    """
    probs = np.asarray(probs, dtype=float)
    k = probs.size
    slopes, dz = _segments(np.asarray(cont, dtype=float), grid, mode)
    nseg = dz.size
    cost = slopes.ravel()
    cap = (probs[:, None] * dz[None, :]).ravel()
    owner = np.repeat(np.arange(k), nseg)
    order = np.lexsort((np.arange(cost.size), cost))
    cost, cap, owner = cost[order], cap[order], owner[order]
    before = np.concatenate([[0.0], np.cumsum(cap)[:-1]])
    ys = np.asarray(ys, dtype=float)
    filled = np.clip(ys[:, None] - before[None, :], 0.0, cap[None, :])
    mass_cost = filled @ cost
    zeta = np.zeros((ys.size, k))
    for i in range(k):
        zeta[:, i] = filled[:, owner == i].sum(axis=1)
    # filled mass of successor i equals p_i * zeta_i
    zeta /= probs[None, :]
    xi = zeta / ys[:, None]
    # at y >= 1 the envelope is the identity alone; remove fill round-off
    xi[ys >= 1.0] = 1.0
    return mass_cost / ys, xi


def inner_min(probs: Sequence[float], cont_values: np.ndarray, y: float, grid: np.ndarray,
              mode: str = LINEAR_YV) -> Tuple[float, np.ndarray]:
    """Minimise ``sum xi p V(s', y xi)`` over the envelope at level ``y``.

    ``cont_values[i, j]`` is the continuation value of successor ``i`` at grid
    level ``grid[j]`` (reward included).
    """
    p = np.asarray(probs, dtype=float)
    if p.min() < 0 or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"successor probabilities must form a distribution (sum={p.sum():.12g})")
    if not 0.0 < y <= 1.0:
        raise ValueError(f"y must lie in (0, 1], got {y}")
    vals, xi = inner_min_batch(p, cont_values, np.array([y]), np.asarray(grid, dtype=float), mode)
    return float(vals[0]), xi[0]


def interp_value(values: np.ndarray, grid: np.ndarray, y: float) -> float:
    """``V(y)`` from grid values via the ``y V(y)`` interpolation used by the backup."""
    if y <= grid[0]:
        return float(values[0])
    j = min(int(np.searchsorted(grid, y)), len(grid) - 1)
    lo, hi = grid[j - 1], grid[j]
    w = (y - lo) / (hi - lo)
    return float(((1 - w) * lo * values[j - 1] + w * hi * values[j]) / y)


# ---------------------------------------------------------------------------
# Backup targets


class MdpModel:
    """Known MDP; nodes are state indices."""

    def __init__(self, spec: MdpSpec):
        self.spec = spec
        self.horizon = spec.horizon
        self.root = spec.initial_state

    def key(self, node) -> Hashable:
        return node

    def actions(self, node) -> Tuple[int, ...]:
        return () if self.spec.is_terminal(node) else self.spec.legal_actions[node]

    def transitions(self, node, a):
        return [(t, p, r, t) for t, p, r in self.spec.outcomes[node][a]]


class BamdpModel:
    """Bayes-adaptive MDP; nodes are ``(state, belief)`` pairs keyed by counts."""

    def __init__(self, domain: ParametricDomain, belief: Optional[Belief] = None):
        self.domain = domain
        self.horizon = domain.horizon
        self.root = (domain.initial_state, belief or Belief.from_prior(domain))

    def key(self, node) -> Hashable:
        return node[0], node[1].key

    def actions(self, node) -> Tuple[int, ...]:
        s = node[0]
        return () if self.domain.is_terminal(s) else self.domain.legal_actions[s]

    def transitions(self, node, a):
        s, b = node
        return [(t, p, r, (t, b.update(s, a, t))) for t, p, r in b.predictive(s, a)]


@dataclass
class Decision:
    actions: np.ndarray               # best action per grid level
    successors: Dict[int, Tuple[int, ...]]
    xi: Dict[int, np.ndarray]         # action -> (G, k) minimising perturbations
    q: Dict[int, np.ndarray]          # action -> (G,) action values


@dataclass
class ValueTable:
    grid: np.ndarray
    horizon: int
    mode: str = LINEAR_YV
    values: Dict[Tuple[int, Hashable], np.ndarray] = field(default_factory=dict)
    decisions: Dict[Tuple[int, Hashable], Decision] = field(default_factory=dict)
    successor_keys: Dict[Tuple[int, Hashable], Dict[int, List[Tuple[int, float, float, Hashable]]]] = \
        field(default_factory=dict)
    _log_grid: Optional[np.ndarray] = field(default=None, repr=False)

    def value(self, t: int, key, y: float) -> float:
        return interp_value(self.values[(t, key)], self.grid, y)

    def grid_index(self, y: float) -> int:
        """Nearest grid level to ``y`` in log space."""
        if self._log_grid is None:
            self._log_grid = np.log(self.grid)
        ly = math.log(max(y, 1e-300))
        j = bisect.bisect_left(self._log_grid, ly)
        if j == 0:
            return 0
        if j >= len(self.grid):
            return len(self.grid) - 1
        return j if self._log_grid[j] - ly < ly - self._log_grid[j - 1] else j - 1

    def action(self, t: int, key, y: float) -> int:
        """Action at the nearest grid level (raises ``KeyError`` for unknown nodes)."""
        return int(self.decisions[(t, key)].actions[self.grid_index(y)])

    def act(self, t: int, key, y: float, exact: bool = False) -> Tuple[int, Dict[int, float]]:
        """Action and adversary perturbation ``{s': xi}`` at budget ``y``.

        ``exact=False`` reads the decision at the nearest grid level;
        ``exact=True`` re-solves the one-step problem at ``y`` itself.
        """
        d = self.decisions[(t, key)]
        if not exact:
            j = self.grid_index(y)
            a = int(d.actions[j])
            return a, dict(zip(d.successors[a], d.xi[a][j]))
        best = None
        for a, succ in self.successor_keys[(t, key)].items():
            probs = np.array([p for _, p, _, _ in succ])
            cont = np.vstack([r + self.values[(t + 1, k2)] for _, _, r, k2 in succ])
            v, xi = inner_min(probs, cont, y, self.grid, self.mode)
            if best is None or v > best[0] + 1e-12:
                best = (v, a, dict(zip([s2 for s2, _, _, _ in succ], xi)))
        return best[1], best[2]


    def to_dict(self) -> dict:
        """Plain-data form; node keys are written with ``repr`` and read back with ``literal_eval``."""
        nodes = []
        for (t, key), v in self.values.items():
            entry = {"t": t, "key": repr(key), "values": v.tolist()}
            d = self.decisions.get((t, key))
            if d is not None:
                entry["actions"] = d.actions.tolist()
                entry["successors"] = {str(a): list(s) for a, s in d.successors.items()}
                entry["xi"] = {str(a): x.tolist() for a, x in d.xi.items()}
                entry["q"] = {str(a): q.tolist() for a, q in d.q.items()}
            nodes.append(entry)
        return {"grid": self.grid.tolist(), "horizon": self.horizon, "mode": self.mode, "nodes": nodes}

    @classmethod
    def from_dict(cls, data: dict) -> "ValueTable":
        table = cls(grid=np.asarray(data["grid"], dtype=float), horizon=int(data["horizon"]), mode=data["mode"])
        for e in data["nodes"]:
            k = (int(e["t"]), ast.literal_eval(e["key"]))
            table.values[k] = np.asarray(e["values"], dtype=float)
            if "actions" in e:
                table.decisions[k] = Decision(
                    np.asarray(e["actions"], dtype=int),
                    {int(a): tuple(s) for a, s in e["successors"].items()},
                    {int(a): np.asarray(x, dtype=float) for a, x in e["xi"].items()},
                    {int(a): np.asarray(q, dtype=float) for a, q in e["q"].items()},
                )
        return table

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str) -> "ValueTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def solve(model, alpha: float = None, grid: Optional[np.ndarray] = None, mode: str = LINEAR_YV,
          max_states: int = 2_000_000) -> ValueTable:
    """Backward induction over the nodes reachable from ``model.root``."""
    if grid is None:
        grid = make_grid(alpha)
    grid = np.asarray(grid, dtype=float)
    H = model.horizon
    table = ValueTable(grid=grid, horizon=H, mode=mode)

    # forward pass: reachable nodes per stage
    layers: List[Dict[Hashable, object]] = [{model.key(model.root): model.root}]
    total = 1
    for t in range(H):
        nxt: Dict[Hashable, object] = {}
        for key, node in layers[t].items():
            succ_by_action = {}
            for a in model.actions(node):
                succ = model.transitions(node, a)
                entries = []
                for s2, p, r, node2 in succ:
                    k2 = model.key(node2)
                    entries.append((s2, p, r, k2))
                    if k2 not in nxt:
                        nxt[k2] = node2
                succ_by_action[a] = entries
            table.successor_keys[(t, key)] = succ_by_action
        total += len(nxt)
        if total > max_states:
            raise StateSpaceTooLarge(f"{total} augmented states reachable by stage {t + 1} "
                                     f"exceed the cap of {max_states}")
        layers.append(nxt)
    logger.info("CVaR VI: %d reachable nodes over %d stages", total, H)

    G = grid.size
    for key in layers[H]:
        table.values[(H, key)] = np.zeros(G)
    for t in range(H - 1, -1, -1):
        for key in layers[t]:
            succ_by_action = table.successor_keys[(t, key)]
            if not succ_by_action:
                table.values[(t, key)] = np.zeros(G)
                continue
            succs, xis, qs = {}, {}, {}
            for a, entries in succ_by_action.items():
                probs = np.array([p for _, p, _, _ in entries])
                cont = np.vstack([r + table.values[(t + 1, k2)] for _, _, r, k2 in entries])
                qs[a], xis[a] = inner_min_batch(probs, cont, grid, grid, mode)
                succs[a] = tuple(s2 for s2, _, _, _ in entries)
            acts = list(qs)
            Q = np.vstack([qs[a] for a in acts])
            # ties go to the lowest action index (e.g. the zero bet)
            best = np.argmax(Q >= Q.max(axis=0, keepdims=True) - 1e-9, axis=0)
            table.values[(t, key)] = Q.max(axis=0)
            table.decisions[(t, key)] = Decision(np.array(acts)[best], succs, xis, qs)
    return table


def solve_mdp(spec: MdpSpec, alpha: float, grid=None, mode: str = LINEAR_YV) -> ValueTable:
    return solve(MdpModel(spec), alpha, grid, mode)


def solve_bamdp(domain: ParametricDomain, alpha: float, grid=None, mode: str = LINEAR_YV,
                belief: Optional[Belief] = None, max_states: int = 2_000_000) -> ValueTable:
    return solve(BamdpModel(domain, belief), alpha, grid, mode, max_states)


def execute_policy(table: ValueTable, domain: ParametricDomain, alpha: float, theta,
                   rng: np.random.Generator, bayes: bool = False, exact: bool = False) -> TrajectoryRecord:
    """Run one episode in the ground truth ``theta`` while tracking the budget.

    ``bayes=True`` keys decisions on ``(state, belief counts)``; otherwise on
    the state alone (expected-MDP policy).
    """
    traj = TrajectoryRecord()
    s, y = domain.initial_state, float(alpha)
    belief = Belief.from_prior(domain) if bayes else None
    for t in range(domain.horizon):
        if domain.is_terminal(s):
            break
        key = (s, belief.key) if bayes else s
        if (t, key) not in table.decisions:
            raise KeyError(f"no decision for stage {t}, node {key}: state missing from the solved model")
        a, xi = table.act(t, key, y, exact=exact)
        s2, r = domain.step(theta, s, a, rng)
        traj.append(s, a, s2, r)
        y = min(1.0, max(y * xi[s2], Y_FLOOR))
        if bayes:
            belief = belief.update(s, a, s2)
        s = s2
    return traj
