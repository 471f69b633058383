"""Tabular finite-horizon MDPs and the two benchmark domains.

Two layers live here:

* :class:`MdpSpec` is a concrete MDP with known transition probabilities,
  stored sparsely as ``outcomes[s][a] = ((s', p, r), ...)``.
* :class:`ParametricDomain` is the same structure with some transition
  probabilities left as latent parameters.  Every successor branch is either
  known (fixed probability) or bound to an outcome of a named parameter group
  (one categorical distribution per group).  Beliefs over the groups live in
  :mod:`bacvar.belief`; ``instantiate`` turns a parameter draw into an
  :class:`MdpSpec`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-9

Outcome = Tuple[int, float, float]
"""A successor ``(next_state, probability, reward)``."""


class MdpError(ValueError):
    """Raised for malformed MDPs, illegal actions and invalid domain configs."""


@dataclass(frozen=True)
class MdpSpec:
    """Explicit tabular finite-horizon MDP with rewards R(s, a, s').

    ``outcomes[s][a]`` lists the supported successors of ``(s, a)``; actions
    that are not in ``legal_actions[s]`` have an empty tuple.  States in
    ``terminal`` end an episode early.
    """

    num_states: int
    num_actions: int
    legal_actions: Tuple[Tuple[int, ...], ...]
    outcomes: Tuple[Tuple[Tuple[Outcome, ...], ...], ...]
    horizon: int
    initial_state: int
    terminal: frozenset = frozenset()
    state_labels: Optional[Tuple] = None

    def transition(self, s: int, a: int, s_next: int) -> float:
        return sum(p for t, p, _ in self.outcomes[s][a] if t == s_next)

    def reward(self, s: int, a: int, s_next: int) -> float:
        for t, _, r in self.outcomes[s][a]:
            if t == s_next:
                return r
        return 0.0

    def transition_matrix(self) -> np.ndarray:
        """Dense ``(S, A, S)`` transition tensor; meant for small MDPs."""
        T = np.zeros((self.num_states, self.num_actions, self.num_states))
        for s, row in enumerate(self.outcomes):
            for a, outs in enumerate(row):
                for t, p, _ in outs:
                    T[s, a, t] += p
        return T

    def is_terminal(self, s: int) -> bool:
        return s in self.terminal


class Step(NamedTuple):
    state: int
    action: int
    next_state: int
    reward: float


@dataclass
class TrajectoryRecord:
    """Ordered ``(s, a, s', r)`` steps of one episode."""

    steps: List[Step] = field(default_factory=list)

    @property
    def total_return(self) -> float:
        return float(sum(step.reward for step in self.steps))

    def append(self, s: int, a: int, s_next: int, r: float) -> None:
        self.steps.append(Step(s, a, s_next, float(r)))


def validate_mdp(spec: MdpSpec) -> List[str]:
    """Return a list of human-readable violations; empty means valid."""
    problems = []
    S, A = spec.num_states, spec.num_actions
    if spec.horizon < 1:
        problems.append(f"horizon must be >= 1, got {spec.horizon}")
    if not 0 <= spec.initial_state < S:
        problems.append(f"initial_state {spec.initial_state} out of range [0, {S})")
    if len(spec.legal_actions) != S or len(spec.outcomes) != S:
        problems.append("legal_actions/outcomes must have one entry per state")
        return problems
    for s in range(S):
        for a in spec.legal_actions[s]:
            if not 0 <= a < A:
                problems.append(f"state {s}: action index {a} out of range [0, {A})")
                continue
            if a >= len(spec.outcomes[s]):
                problems.append(f"state {s}: no outcomes for legal action {a}")
                continue
            outs = spec.outcomes[s][a]
            total = 0.0
            for t, p, _ in outs:
                if not 0 <= t < S:
                    problems.append(f"(s={s}, a={a}): successor {t} out of range")
                if not 0.0 <= p <= 1.0:
                    problems.append(f"(s={s}, a={a}): probability {p} outside [0, 1]")
                total += p
            if abs(total - 1.0) > ROW_SUM_TOL:
                problems.append(f"(s={s}, a={a}): transition row sums to {total:.12g}, not 1")
        if not spec.legal_actions[s] and s not in spec.terminal:
            problems.append(f"state {s}: non-terminal state without legal actions")
    return problems


def step(spec: MdpSpec, s: int, a: int, rng: np.random.Generator) -> Tuple[int, float]:
    """Sample ``s' ~ T(s, a, .)`` and return ``(s', R(s, a, s'))``."""
    if a not in spec.legal_actions[s]:
        raise MdpError(f"action {a} is not legal in state {s} (legal: {spec.legal_actions[s]})")
    return sample_outcome(spec.outcomes[s][a], rng.random())


def sample_outcome(outs: Sequence[Outcome], u: float) -> Tuple[int, float]:
    acc = 0.0
    for t, p, r in outs:
        acc += p
        if u < acc:
            return t, r
    # u landed in the float round-off gap above the cumulative sum
    t, _, r = outs[-1]
    return t, r


def simulate(
    spec: MdpSpec,
    policy: Callable[[int, int], int],
    rng: np.random.Generator,
) -> TrajectoryRecord:
    """Run ``policy(t, s)`` for one episode of ``spec``."""
    traj = TrajectoryRecord()
    s = spec.initial_state
    for t in range(spec.horizon):
        if spec.is_terminal(s):
            break
        a = policy(t, s)
        s_next, r = step(spec, s, a, rng)
        traj.append(s, a, s_next, r)
        s = s_next
    return traj


# ---------------------------------------------------------------------------
# Parametric domains


class Branch(NamedTuple):
    """One successor of ``(s, a)``.

    ``group`` is ``None`` for a known transition with probability ``prob``;
    otherwise the probability is ``prob * theta[group][outcome]``.
    """

    next_state: int
    reward: float
    group: Optional[int] = None
    outcome: int = 0
    prob: float = 1.0


@dataclass(frozen=True)
class ParametricDomain:
    """Tabular domain whose transition probabilities depend on latent groups.

    ``prior[g]`` holds the Dirichlet concentration of group ``g`` (a Beta prior
    is the two-outcome case).
    """

    name: str
    num_states: int
    num_actions: int
    legal_actions: Tuple[Tuple[int, ...], ...]
    branches: Tuple[Tuple[Tuple[Branch, ...], ...], ...]
    horizon: int
    initial_state: int
    group_names: Tuple[str, ...]
    outcome_names: Tuple[Tuple[str, ...], ...]
    prior: Tuple[Tuple[float, ...], ...]
    terminal: frozenset = frozenset()
    state_labels: Optional[Tuple] = None
    action_labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if len(self.prior) != len(self.group_names):
            raise MdpError("one prior per parameter group is required")
        for g, conc in enumerate(self.prior):
            if len(conc) != len(self.outcome_names[g]) or min(conc) <= 0:
                raise MdpError(f"group {self.group_names[g]!r}: prior must be positive per outcome")

    @property
    def num_groups(self) -> int:
        return len(self.group_names)

    def is_terminal(self, s: int) -> bool:
        return s in self.terminal

    def group_index(self, name: str) -> int:
        return self.group_names.index(name)

    def instantiate(self, theta: Sequence[Sequence[float]]) -> MdpSpec:
        """Concrete MDP for per-group outcome probabilities ``theta``."""
        outcomes = []
        for s in range(self.num_states):
            row = []
            for a in range(self.num_actions):
                row.append(tuple(
                    (b.next_state, b.prob * (1.0 if b.group is None else float(theta[b.group][b.outcome])),
                     b.reward)
                    for b in self.branches[s][a]
                ))
            outcomes.append(tuple(row))
        return MdpSpec(
            num_states=self.num_states,
            num_actions=self.num_actions,
            legal_actions=self.legal_actions,
            outcomes=tuple(outcomes),
            horizon=self.horizon,
            initial_state=self.initial_state,
            terminal=self.terminal,
            state_labels=self.state_labels,
        )

    def step(self, theta, s: int, a: int, rng: np.random.Generator) -> Tuple[int, float]:
        """Step the ground-truth MDP for ``theta`` without building it."""
        if a not in self.legal_actions[s]:
            raise MdpError(f"action {a} is not legal in state {s} (legal: {self.legal_actions[s]})")
        u = rng.random()
        acc = 0.0
        branches = self.branches[s][a]
        for b in branches:
            acc += b.prob * (1.0 if b.group is None else theta[b.group][b.outcome])
            if u < acc:
                return b.next_state, b.reward
        return branches[-1].next_state, branches[-1].reward

    def lookup(self, s: int, a: int, s_next: int) -> Branch:
        for b in self.branches[s][a]:
            if b.next_state == s_next:
                return b
        raise MdpError(f"transition ({s}, {a}, {s_next}) is not supported by the domain")


# ---------------------------------------------------------------------------
# Betting game

BETTING_BETS = (0, 1, 2, 5, 10)


@dataclass(frozen=True)
class BettingConfig:
    initial_money: int = 10
    bets: Tuple[int, ...] = BETTING_BETS
    stages: int = 6
    prior_alpha: float = 10 / 11
    prior_beta: float = 1 / 11

    @property
    def max_money(self) -> int:
        return self.initial_money + self.stages * max(self.bets)


def betting_state(cfg: BettingConfig, stage: int, money: int) -> int:
    return stage * (cfg.max_money + 1) + money


def betting_game_domain(cfg: BettingConfig = BettingConfig()) -> ParametricDomain:
    """Betting game with an unknown win probability under a Beta prior.

    States are ``(stage, money)``; the reward is the final money, paid on the
    transition into the last stage.  A bet of 0 has a single known successor,
    so it reveals nothing about the win probability.
    """
    width = cfg.max_money + 1
    S = (cfg.stages + 1) * width
    A = len(cfg.bets)
    legal, branches, labels = [], [], []
    for stage in range(cfg.stages + 1):
        for money in range(width):
            labels.append((stage, money))
            row: List[Tuple[Branch, ...]] = [()] * A
            acts: Tuple[int, ...] = ()
            if stage < cfg.stages:
                # the money cap only binds in states that are unreachable from the start
                acts = tuple(i for i, b in enumerate(cfg.bets) if b <= money and money + b <= cfg.max_money)
                last = stage + 1 == cfg.stages
                for i in acts:
                    bet = cfg.bets[i]

                    def succ(m):
                        return betting_state(cfg, stage + 1, m), float(m) if last else 0.0

                    if bet == 0:
                        s2, r = succ(money)
                        row[i] = (Branch(s2, r),)
                    else:
                        win, lose = succ(money + bet), succ(money - bet)
                        row[i] = (Branch(win[0], win[1], 0, 0), Branch(lose[0], lose[1], 0, 1))
            legal.append(acts)
            branches.append(tuple(row))
    terminal = frozenset(betting_state(cfg, cfg.stages, m) for m in range(width))
    return ParametricDomain(
        name="betting",
        num_states=S,
        num_actions=A,
        legal_actions=tuple(legal),
        branches=tuple(branches),
        horizon=cfg.stages,
        initial_state=betting_state(cfg, 0, cfg.initial_money),
        group_names=("game",),
        outcome_names=(("win", "lose"),),
        prior=((float(cfg.prior_alpha), float(cfg.prior_beta)),),
        terminal=terminal,
        state_labels=tuple(labels),
        action_labels=tuple(f"bet{b}" for b in cfg.bets),
    )


def betting_game_mdp(p_win: float, cfg: BettingConfig = BettingConfig()) -> MdpSpec:
    """Betting game with a known win probability."""
    if not 0.0 <= p_win <= 1.0:
        raise MdpError(f"p_win must lie in [0, 1], got {p_win}")
    return betting_game_domain(cfg).instantiate(((p_win, 1.0 - p_win),))


# ---------------------------------------------------------------------------
# Road network navigation

DIRECTIONS = ("up", "down", "left", "right")
SPEED_OUTCOMES = ("fast", "medium", "slow")


class Edge(NamedTuple):
    source: str
    target: str
    road_type: str
    action: str


@dataclass(frozen=True)
class RoadNetworkConfig:
    """Road map: directed edges between junctions, each of a given road type.

    ``road_types`` maps a type name to its ``(outcome_label, duration)`` list
    and ``priors`` to the Dirichlet concentration per outcome.
    """

    junctions: Tuple[str, ...]
    edges: Tuple[Edge, ...]
    start: str
    goal: str
    road_types: Mapping[str, Tuple[Tuple[str, float], ...]]
    priors: Mapping[str, Tuple[float, ...]]
    goal_reward: float = 80.0
    horizon: int = 10

    def problems(self) -> List[str]:
        out = []
        names = set(self.junctions)
        if len(names) != len(self.junctions):
            out.append("duplicate junction names")
        for j in (self.start, self.goal):
            if j not in names:
                out.append(f"junction {j!r} is not declared")
        seen = set()
        for e in self.edges:
            if e.source not in names or e.target not in names:
                out.append(f"dangling edge {e.source}->{e.target}")
            if e.road_type not in self.road_types:
                out.append(f"edge {e.source}->{e.target}: unknown road type {e.road_type!r}")
            if e.action not in DIRECTIONS:
                out.append(f"edge {e.source}->{e.target}: unknown action {e.action!r}")
            if (e.source, e.action) in seen:
                out.append(f"junction {e.source!r} has two edges for action {e.action!r}")
            seen.add((e.source, e.action))
        for rt, outs in self.road_types.items():
            prior = self.priors.get(rt)
            if prior is None or len(prior) != len(outs):
                out.append(f"road type {rt!r}: prior must give one concentration per outcome")
            elif min(prior) <= 0:
                out.append(f"road type {rt!r}: prior concentrations must be positive")
        if self.horizon < 1:
            out.append("horizon must be >= 1")
        if not out and not self._goal_reachable():
            out.append(f"goal {self.goal!r} unreachable from {self.start!r}")
        return out

    def _goal_reachable(self) -> bool:
        adj: Dict[str, List[str]] = {}
        for e in self.edges:
            adj.setdefault(e.source, []).append(e.target)
        stack, seen = [self.start], {self.start}
        while stack:
            j = stack.pop()
            if j == self.goal:
                return True
            for k in adj.get(j, ()):
                if k not in seen:
                    seen.add(k)
                    stack.append(k)
        return False


def _road_layout(config: RoadNetworkConfig):
    problems = config.problems()
    if problems:
        raise MdpError("invalid road network: " + "; ".join(problems))
    types = tuple(config.road_types)
    width = 1 + max(len(v) for v in config.road_types.values())
    jidx = {j: i for i, j in enumerate(config.junctions)}
    return types, width, jidx


def road_network_domain(config: RoadNetworkConfig) -> ParametricDomain:
    """Navigation domain with one Dirichlet belief per road type.

    A state is ``(junction, last_outcome)`` where ``last_outcome`` is 0 before
    the first move and ``k + 1`` after an outcome ``k`` traversal.  Tagging the
    outcome keeps outcomes with equal durations distinguishable, so the
    successor state identifies the observation.
    """
    types, width, jidx = _road_layout(config)
    S = len(config.junctions) * width
    A = len(DIRECTIONS)
    by_source: Dict[str, List[Edge]] = {}
    for e in config.edges:
        by_source.setdefault(e.source, []).append(e)
    legal, branches, labels = [], [], []
    goal = jidx[config.goal]
    for j in config.junctions:
        for tag in range(width):
            labels.append((j, tag))
            row: List[Tuple[Branch, ...]] = [()] * A
            acts = []
            if j != config.goal:
                for e in by_source.get(j, ()):
                    a = DIRECTIONS.index(e.action)
                    g = types.index(e.road_type)
                    t = jidx[e.target]
                    bonus = config.goal_reward if t == goal else 0.0
                    row[a] = tuple(
                        Branch(t * width + k + 1, bonus - float(dur), g, k)
                        for k, (_, dur) in enumerate(config.road_types[e.road_type])
                    )
                    acts.append(a)
            legal.append(tuple(sorted(acts)))
            branches.append(tuple(row))
    return ParametricDomain(
        name="road_network",
        num_states=S,
        num_actions=A,
        legal_actions=tuple(legal),
        branches=tuple(branches),
        horizon=config.horizon,
        initial_state=jidx[config.start] * width,
        group_names=types,
        outcome_names=tuple(tuple(lbl for lbl, _ in config.road_types[t]) for t in types),
        prior=tuple(tuple(float(c) for c in config.priors[t]) for t in types),
        terminal=frozenset(goal * width + k for k in range(width)),
        state_labels=tuple(labels),
        action_labels=DIRECTIONS,
    )


def road_network_mdp(config: RoadNetworkConfig, outcome_probs: Mapping[str, Sequence[float]]) -> MdpSpec:
    """Navigation MDP with known per-road-type outcome probabilities."""
    domain = road_network_domain(config)
    theta = []
    for t in domain.group_names:
        probs = outcome_probs.get(t)
        if probs is None:
            raise MdpError(f"missing outcome probabilities for road type {t!r}")
        if abs(sum(probs) - 1.0) > ROW_SUM_TOL or min(probs) < 0:
            raise MdpError(f"outcome probabilities for {t!r} must be a distribution, got {probs}")
        theta.append(tuple(probs))
    return domain.instantiate(theta)


ROAD_TYPES = {
    "highway": (("fast", 1.0), ("medium", 2.0), ("slow", 18.0)),
    "main_road": (("fast", 2.0), ("medium", 4.0), ("slow", 13.0)),
    "street": (("fast", 4.0), ("medium", 5.0), ("slow", 11.0)),
    "lane": (("fast", 7.0), ("medium", 7.0), ("slow", 8.0)),
}
ROAD_PRIOR = (1.0, 1.0, 0.4)


def grid_road_network(rows: Sequence[str], cols: Sequence[str], start, goal,
                      goal_reward: float = 80.0, horizon: int = 10) -> RoadNetworkConfig:
    """Build a bidirectional grid map.

    ``rows[r]`` is a string of road-type codes for the horizontal roads in row
    ``r`` and ``cols[c]`` the vertical roads in column ``c``; codes are
    ``h`` (highway), ``m`` (main road), ``s`` (street), ``l`` (lane) and ``.``
    (no road).  ``start``/``goal`` are ``(row, col)`` pairs.
    """
    codes = {"h": "highway", "m": "main_road", "s": "street", "l": "lane"}
    n_rows, n_cols = len(rows), len(cols)

    def name(r, c):
        return f"j{r}_{c}"

    edges = []
    for r, line in enumerate(rows):
        for c, code in enumerate(line):
            if code != ".":
                edges.append(Edge(name(r, c), name(r, c + 1), codes[code], "right"))
                edges.append(Edge(name(r, c + 1), name(r, c), codes[code], "left"))
    for c, line in enumerate(cols):
        for r, code in enumerate(line):
            if code != ".":
                edges.append(Edge(name(r, c), name(r + 1, c), codes[code], "down"))
                edges.append(Edge(name(r + 1, c), name(r, c), codes[code], "up"))
    # junctions without any road are left out so every non-goal state has a move
    used = {e.source for e in edges} | {name(*start), name(*goal)}
    junctions = tuple(name(r, c) for r in range(n_rows) for c in range(n_cols) if name(r, c) in used)
    return RoadNetworkConfig(
        junctions=junctions,
        edges=tuple(edges),
        start=name(*start),
        goal=name(*goal),
        road_types=dict(ROAD_TYPES),
        priors={t: ROAD_PRIOR for t in ROAD_TYPES},
        goal_reward=goal_reward,
        horizon=horizon,
    )
