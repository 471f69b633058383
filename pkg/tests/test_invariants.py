"""Invariants checked over 1000 generated cases each."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bacvar import mcts, pg, vi
from bacvar.belief import Belief
from bacvar.cvar import DiscreteDistribution, min_over_envelope
from bacvar.game import ADVERSARY, CHANCE

CASES = settings(max_examples=1000, deadline=None)


@st.composite
def distributions(draw):
    n = draw(st.integers(1, 8))
    w = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n))) + 1e-3
    v = draw(st.lists(st.floats(-100, 100), min_size=n, max_size=n))
    return DiscreteDistribution(v, w / w.sum())


@CASES
@given(distributions(), st.floats(0.01, 1.0))
def test_envelope_weights_admissible(dist, alpha):
    value, env = min_over_envelope(dist, alpha)
    xi = env.xi
    assert xi.min() >= 0 and xi.max() <= 1 / alpha + 1e-9
    assert abs(xi @ dist.probs - 1.0) < 1e-9
    assert value <= dist.values @ dist.probs + 1e-9


def tree_paths(domain, alpha, sims, seed):
    p = mcts.Planner(domain, mcts.SearchConfig(alpha=alpha), np.random.default_rng(seed))
    root = p.new_agent(domain.initial_state, Belief.from_prior(domain), alpha, 0, None)
    for _ in range(sims):
        path, _ = p.simulate(root)
        yield path


@pytest.mark.parametrize("alpha", [0.03, 0.2])
def test_path_product_and_widening(betting, alpha):
    for path in tree_paths(betting, alpha, 1000, 11):
        prod = 1.0
        for i, v in enumerate(path):
            assert 0 < v.y <= 1
            if v.kind == ADVERSARY:
                assert len(v.children) <= math.ceil(v.N ** 0.2) + 1
            if v.kind == CHANCE and i + 1 < len(path):
                w = path[i + 1]
                x = v.xi[v.parent.succ.index(w.s)]
                prod *= x
                assert w.y == pytest.approx(min(1.0, max(v.y * x, mcts.Y_FLOOR)))
                assert alpha * prod <= w.y + 1e-12
        assert prod <= 1 / alpha + 1e-6


def test_backup_mean_identity(navigation):
    p = mcts.Planner(navigation, mcts.SearchConfig(alpha=0.2), np.random.default_rng(5))
    root = p.new_agent(navigation.initial_state, Belief.from_prior(navigation), 0.2, 0, None)
    totals = {}
    for _ in range(1000):
        path, rewards = p.tree_policy(root)
        ret = p.default_policy(path[-1])
        p.update_nodes(path, rewards, ret)
        g = ret
        for i in range(len(path) - 1, -1, -1):
            if i < len(path) - 1:
                g += rewards[i]
            node, s, n = totals.get(id(path[i]), (path[i], 0.0, 0))
            totals[id(path[i])] = (node, s + g, n + 1)
    for node, s, n in totals.values():
        assert node.N == n and node.Q == pytest.approx(s / n, abs=1e-8)


@pytest.fixture(scope="module")
def betting_table(betting):
    return vi.solve_bamdp(betting, 0.03)


@CASES
@given(st.data())
def test_value_table_monotone_in_y(betting_table, data):
    keys = sorted(betting_table.values, key=repr)
    t, key = data.draw(st.sampled_from(keys))
    y1 = data.draw(st.floats(0.003, 1.0))
    y2 = data.draw(st.floats(y1, 1.0))
    assert betting_table.value(t, key, y1) <= betting_table.value(t, key, y2) + 1e-9


@CASES
@given(st.integers(0, 2 ** 32 - 1), st.lists(st.integers(0, 4), min_size=1, max_size=6))
def test_particle_weights_stay_normalised(betting, seed, bets):
    rng = np.random.default_rng(seed)
    pb = pg.ParticleBelief.from_prior(betting, rng, 5)
    theta = Belief.from_prior(betting).sample_theta(rng)
    s = betting.initial_state
    for a in bets:
        if betting.is_terminal(s) or a not in betting.legal_actions[s]:
            break
        s2, _ = betting.step(theta, s, a, rng)
        pb = pg.particle_update(pb, betting, s, a, s2)
        s = s2
        assert pb.weights.min() >= 0 and pb.weights.sum() == pytest.approx(1.0)
