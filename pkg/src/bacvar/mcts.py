"""Risk-averse Bayes-adaptive Monte Carlo tree search.

The tree alternates agent, adversary and chance layers.  Agent nodes pick
MDP actions by UCB, adversary nodes pick perturbations of the posterior
predictive by a lower confidence bound and grow their perturbation set by
progressive widening (new perturbations come from GP-LCB proposals, or at
random), and chance nodes sample successors from the perturbed predictive.

Adversary nodes whose perturbation set is a single point (budget ``y = 1``
or a single successor) are created with their only chance child already in
place and never widen, so with ``alpha = 1`` the search is plain BAMCP.

Rewards are attributed to the chance -> agent edge; ``Q`` of a node is the
mean return collected from that node onward.
"""
from __future__ import annotations

import bisect
import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from bacvar.belief import Belief
from bacvar.game import (AGENT, ADVERSARY, CHANCE, ZERO_PROB, AugState, GameError,
                         Perturbation, PerturbationSpace, sample_xi)
from bacvar.gp import AcquisitionConfig, GpModel, propose
from bacvar.mdp import ParametricDomain, TrajectoryRecord

logger = logging.getLogger(__name__)

BAYESOPT, RANDOM = "bayesopt", "random"
Y_FLOOR = 1e-6


@dataclass
class SearchConfig:
    alpha: float = 1.0
    c_mcts: float = 2.0
    c_bo: float = 2.0
    tau: float = 0.2
    sims_initial: int = 100_000
    sims_step: int = 25_000
    expansion_mode: str = BAYESOPT
    seed: int = 0
    num_candidates: int = 64
    reward_scale: float = 1.0  # exploration bonuses are multiplied by this
    debug_path: Optional[str] = None

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.sims_initial < 1 or self.sims_step < 1:
            raise ValueError("simulation budgets must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.expansion_mode not in (BAYESOPT, RANDOM):
            raise ValueError(f"expansion_mode must be {BAYESOPT!r} or {RANDOM!r}")


class TreeNode:
    __slots__ = ("kind", "s", "belief", "y", "t", "N", "Q", "parent", "children")

    def __init__(self, kind, s, belief, y, t, parent):
        self.kind = kind
        self.s, self.belief, self.y, self.t = s, belief, y, t
        self.N = 0
        self.Q = 0.0
        self.parent = parent
        self.children = []

    @property
    def aug(self) -> AugState:
        pending = None if self.kind == AGENT else self.action
        return AugState(self.s, self.belief, self.y, self.kind, pending, self.t)


class AgentNode(TreeNode):
    __slots__ = ("untried", "terminal")

    def __init__(self, s, belief, y, t, parent, untried, terminal):
        super().__init__(AGENT, s, belief, y, t, parent)
        self.untried = untried
        self.terminal = terminal


class AdversaryNode(TreeNode):
    __slots__ = ("action", "succ", "probs", "rewards", "forced", "gp", "_space", "_next_beliefs")

    def __init__(self, parent: AgentNode, action, outs):
        super().__init__(ADVERSARY, parent.s, parent.belief, parent.y, parent.t, parent)
        self.action = action
        self.succ = [o[0] for o in outs]
        self.probs = [o[1] for o in outs]
        self.rewards = [o[2] for o in outs]
        self.forced = len(outs) == 1 or self.y >= 1.0
        self.gp = None
        self._space = None
        self._next_beliefs = None

    @property
    def expanded_perturbations(self) -> List[np.ndarray]:
        return [c.xi for c in self.children]

    @property
    def space(self) -> PerturbationSpace:
        if self._space is None:
            self._space = PerturbationSpace(self.probs, 1.0 / self.y)
        return self._space

    def next_belief(self, i):
        if self._next_beliefs is None:
            self._next_beliefs = [None] * len(self.succ)
        b = self._next_beliefs[i]
        if b is None:
            b = self._next_beliefs[i] = self.belief.update(self.s, self.action, self.succ[i])
        return b


class ChanceNode(TreeNode):
    __slots__ = ("xi", "index", "cum", "total", "next_y", "by_index")

    def __init__(self, parent: AdversaryNode, xi):
        super().__init__(CHANCE, parent.s, parent.belief, parent.y, parent.t, parent)
        self.xi = np.asarray(xi, dtype=float)
        idx, cum, ys = [], [], []
        acc = 0.0
        for i, (x, p) in enumerate(zip(xi, parent.probs)):
            q = x * p
            if q < ZERO_PROB:
                continue
            acc += q
            idx.append(i)
            cum.append(acc)
            ys.append(min(1.0, max(parent.y * x, Y_FLOOR)))
        self.index, self.cum, self.total, self.next_y = idx, cum, acc, ys
        self.by_index: Dict[int, AgentNode] = {}

    def sample(self, u: float) -> int:
        """Position (into ``index``) of the successor selected by ``u`` in [0, 1)."""
        j = bisect.bisect_right(self.cum, u * self.total)
        return min(j, len(self.cum) - 1)

    def probabilities(self) -> Dict[int, float]:
        prev = 0.0
        out = {}
        for i, c in zip(self.index, self.cum):
            out[self.parent.succ[i]] = (c - prev) / self.total
            prev = c
        return out


@dataclass
class SearchResult:
    action: int
    perturbation: Perturbation
    root_value: float
    children: Dict[int, Tuple[int, float]]
    adversary: List[Tuple[List[float], int, float]] = field(default_factory=list)
    gp_size: int = 0
    simulations: int = 0
    seconds: float = 0.0


def ucb_scores(v: TreeNode, c: float) -> List[float]:
    logn = math.log(v.N) if v.N > 0 else 0.0
    if v.kind == AGENT:
        return [ch.Q + c * math.sqrt(logn / ch.N) for ch in v.children]
    return [ch.Q - c * math.sqrt(logn / ch.N) for ch in v.children]


def best_child(v: TreeNode, c: float, rng: random.Random) -> TreeNode:
    """UCB child for agent nodes, LCB child for adversary nodes; ties at random."""
    if v.kind == CHANCE:
        raise GameError("chance nodes are sampled, not selected")
    kids = v.children
    if not kids:
        raise GameError("best_child on an unexpanded node")
    if len(kids) == 1:
        return kids[0]
    if any(ch.N == 0 for ch in kids):
        raise GameError("every child needs at least one visit")
    scores = ucb_scores(v, c)
    target = max(scores) if v.kind == AGENT else min(scores)
    ties = [i for i, sc in enumerate(scores) if sc == target]
    return kids[ties[0] if len(ties) == 1 else ties[rng.randrange(len(ties))]]


def widening_allows(v: AdversaryNode, tau: float) -> bool:
    return not v.forced and v.N ** tau >= len(v.children)


class Planner:
    """Search tree construction for one episode; keeps model caches across re-roots."""

    def __init__(self, domain: ParametricDomain, cfg: SearchConfig, rng: np.random.Generator,
                 rollout_policy: Optional[Callable[[int, int, float], int]] = None):
        self.domain = domain
        self.cfg = cfg
        self.np_rng = rng
        self.rng = random.Random(int(rng.integers(2 ** 63)))
        self.rollout_policy = rollout_policy
        self.acq = AcquisitionConfig(c_bo=cfg.c_bo, num_candidates=cfg.num_candidates)
        self._pred: Dict = {}
        self._warned = False

    # -- model helpers -------------------------------------------------------

    def predictive(self, s, belief, a):
        key = (s, a, belief.key)
        out = self._pred.get(key)
        if out is None:
            out = self._pred[key] = belief.predictive(s, a)
        return out

    def is_terminal(self, s, t) -> bool:
        return t >= self.domain.horizon or self.domain.is_terminal(s)

    def new_agent(self, s, belief, y, t, parent) -> AgentNode:
        term = self.is_terminal(s, t)
        untried = [] if term else list(self.domain.legal_actions[s])
        self.rng.shuffle(untried)
        return AgentNode(s, belief, y, t, parent, untried, term)

    # -- tree operations -----------------------------------------------------

    def expand_agent(self, v: AgentNode) -> AdversaryNode:
        a = v.untried.pop()
        adv = AdversaryNode(v, a, self.predictive(v.s, v.belief, a))
        if adv.forced:
            adv.children.append(ChanceNode(adv, [1.0] * len(adv.succ)))
        v.children.append(adv)
        return adv

    def expand_adversary(self, v: AdversaryNode) -> ChanceNode:
        if not widening_allows(v, self.cfg.tau):
            raise GameError(f"widening test fails: N={v.N}, |expanded|={len(v.children)}")
        if not v.children or self.cfg.expansion_mode == RANDOM:
            xi = sample_xi(v.probs, v.y, self.rng)
        else:
            if v.gp is None:
                v.gp = GpModel(lengthscale=1.0 / (5.0 * v.y))
            gp = v.gp
            gp.inputs = [c.xi for c in v.children]
            gp.labels = [c.Q for c in v.children]
            gp._fit = None
            xi = propose(gp, v.space, self.acq, self.np_rng)
        ch = ChanceNode(v, xi)
        v.children.append(ch)
        return ch

    def chance_step(self, v: ChanceNode) -> Tuple[AgentNode, float]:
        j = v.sample(self.rng.random())
        i = v.index[j]
        child = v.by_index.get(i)
        adv = v.parent
        if child is None:
            child = self.new_agent(adv.succ[i], adv.next_belief(i), v.next_y[j], v.t + 1, v)
            v.by_index[i] = child
            v.children.append(child)
        return child, adv.rewards[i]

    def tree_policy(self, root: AgentNode):
        path, rewards = [root], []
        v = root
        c = self.cfg.c_mcts * self.cfg.reward_scale
        while True:
            if v.kind == AGENT:
                if v.terminal:
                    break
                if v.untried:
                    v = self.expand_agent(v)
                    path.append(v)
                    rewards.append(0.0)
                    break
                v = best_child(v, c, self.rng)
                rewards.append(0.0)
            elif v.kind == ADVERSARY:
                if widening_allows(v, self.cfg.tau):
                    v = self.expand_adversary(v)
                    path.append(v)
                    rewards.append(0.0)
                    break
                v = best_child(v, c, self.rng)
                rewards.append(0.0)
            else:
                v, r = self.chance_step(v)
                rewards.append(r)
            path.append(v)
        return path, rewards

    def default_policy(self, leaf: TreeNode) -> float:
        """Rollout return from ``leaf`` onward."""
        rng = self.rng
        total = 0.0
        if leaf.kind == AGENT:
            if leaf.terminal:
                return 0.0
            s, belief, y, t = leaf.s, leaf.belief, leaf.y, leaf.t
            a = None
        else:
            s, belief, y, t = leaf.s, leaf.belief, leaf.y, leaf.t
            a = leaf.action if leaf.kind == ADVERSARY else leaf.parent.action
        xi = leaf.xi if leaf.kind == CHANCE else None
        H = self.domain.horizon
        while True:
            if a is None:
                if t >= H or self.domain.is_terminal(s):
                    return total
                a = self.rollout_action(t, s, y)
            outs = self.predictive(s, belief, a)
            if xi is None:
                xi = sample_xi([o[1] for o in outs], y, rng)
            u = rng.random() * sum(x * o[1] for x, o in zip(xi, outs))
            acc = 0.0
            pick = len(outs) - 1
            for i, (x, o) in enumerate(zip(xi, outs)):
                acc += x * o[1]
                if u < acc:
                    pick = i
                    break
            s2, _, r = outs[pick]
            total += r
            y = min(1.0, max(y * xi[pick], Y_FLOOR))
            belief = belief.update(s, a, s2)
            s, t, a, xi = s2, t + 1, None, None

    def rollout_action(self, t, s, y) -> int:
        legal = self.domain.legal_actions[s]
        if self.rollout_policy is not None:
            try:
                return self.rollout_policy(t, s, y)
            except KeyError:
                pass
        if not self._warned:
            logger.warning("no rollout policy entry at stage %d state %d; using uniform actions", t, s)
            self._warned = True
        return legal[self.rng.randrange(len(legal))]

    @staticmethod
    def update_nodes(path: List[TreeNode], rewards: List[float], ret: float) -> None:
        g = ret
        for i in range(len(path) - 1, -1, -1):
            if i < len(path) - 1:
                g += rewards[i]
            v = path[i]
            v.N += 1
            v.Q += (g - v.Q) / v.N

    def simulate(self, root: AgentNode) -> Tuple[List[TreeNode], float]:
        path, rewards = self.tree_policy(root)
        ret = self.default_policy(path[-1])
        self.update_nodes(path, rewards, ret)
        return path, ret

    def search(self, aug: AugState, sims: int) -> Tuple[SearchResult, AgentNode]:
        if aug.turn != AGENT:
            raise GameError("search expects an agent-turn root")
        if self.is_terminal(aug.s, aug.t):
            raise GameError(f"search from terminal state {aug.s} at stage {aug.t}")
        start = time.perf_counter()
        root = self.new_agent(aug.s, aug.belief, aug.y, aug.t, None)
        for _ in range(sims):
            self.simulate(root)
        best = max(root.children, key=lambda ch: ch.Q)
        ties = [ch for ch in root.children if ch.Q == best.Q]
        if len(ties) > 1:
            best = ties[self.rng.randrange(len(ties))]
        visited = [ch for ch in best.children if ch.N > 0] or best.children
        worst = min(visited, key=lambda ch: ch.Q)
        res = SearchResult(
            action=best.action,
            perturbation=Perturbation(tuple(best.succ), worst.xi.copy()),
            root_value=root.Q,
            children={ch.action: (ch.N, ch.Q) for ch in root.children},
            adversary=[(ch.xi.tolist(), ch.N, ch.Q) for ch in best.children],
            gp_size=len(best.gp.inputs) if best.gp is not None else 0,
            simulations=sims,
            seconds=time.perf_counter() - start,
        )
        if self.cfg.debug_path:
            with open(self.cfg.debug_path, "a") as fh:
                fh.write(json.dumps({"s": aug.s, "t": aug.t, "y": aug.y, **asdict(res),
                                     "perturbation": res.perturbation.as_dict()}) + "\n")
        return res, root


def search(root: AugState, cfg: SearchConfig, rng: np.random.Generator, domain: ParametricDomain,
           rollout_policy=None, sims: Optional[int] = None) -> SearchResult:
    """One search from ``root`` with ``sims`` simulations (default ``cfg.sims_initial``)."""
    planner = Planner(domain, cfg, rng, rollout_policy)
    return planner.search(root, cfg.sims_initial if sims is None else sims)[0]


def emdp_rollout_policy(domain: ParametricDomain, alpha: float, belief: Optional[Belief] = None):
    """Agent rollout policy from CVaR VI on the expected MDP of ``belief``."""
    from bacvar import vi

    b = belief or Belief.from_prior(domain)
    table = vi.solve_mdp(b.expected_mdp(), alpha)

    def policy(t, s, y):
        return table.action(t, s, y)

    policy.table = table
    return policy


def act_online(domain: ParametricDomain, cfg: SearchConfig, rng: np.random.Generator, theta,
               env_rng: Optional[np.random.Generator] = None, rollout_policy=None,
               belief: Optional[Belief] = None) -> Tuple[TrajectoryRecord, float]:
    """Plan and act for one episode in the ground truth ``theta``.

    Returns the trajectory and the planner compute time in seconds.
    """
    env_rng = rng if env_rng is None else env_rng
    if rollout_policy is None:
        rollout_policy = emdp_rollout_policy(domain, cfg.alpha, belief)
    planner = Planner(domain, cfg, rng, rollout_policy)
    traj = TrajectoryRecord()
    s, y = domain.initial_state, float(cfg.alpha)
    b = belief or Belief.from_prior(domain)
    compute = 0.0
    for t in range(domain.horizon):
        if domain.is_terminal(s):
            break
        res, _ = planner.search(AugState(s, b, y, AGENT, None, t), cfg.sims_initial if t == 0 else cfg.sims_step)
        compute += res.seconds
        a = res.action
        if a not in domain.legal_actions[s]:
            raise GameError(f"planner returned illegal action {a} in state {s}")
        s2, r = domain.step(theta, s, a, env_rng)
        traj.append(s, a, s2, r)
        y = min(1.0, max(y * res.perturbation[s2], Y_FLOOR))
        b = b.update(s, a, s2)
        s = s2
    return traj, compute
