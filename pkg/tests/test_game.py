import numpy as np
import pytest

from bacvar.belief import Belief
from bacvar.game import (AGENT, ADVERSARY, AugState, GameError, Perturbation, PerturbationSpace, is_admissible,
                         perturbed_transition, random_perturbation, sample_xi, successors)
from bacvar.mdp import BettingConfig, betting_game_domain


@pytest.fixture(scope="module")
def fair_coin():
    return betting_game_domain(BettingConfig(prior_alpha=1.0, prior_beta=1.0))


def root(domain, y):
    return AugState(domain.initial_state, Belief.from_prior(domain), y)


def test_augstate_invariants(betting):
    b = Belief.from_prior(betting)
    with pytest.raises(GameError):
        AugState(0, b, 0.0)
    with pytest.raises(GameError):
        AugState(0, b, 1.5)
    with pytest.raises(GameError):
        AugState(0, b, 0.5, turn=ADVERSARY)
    with pytest.raises(GameError):
        AugState(0, b, 0.5, turn=AGENT, pending_action=1)


def test_successors_betting_prior(betting):
    aug = root(betting, 0.5)
    probs = sorted(p for _, p in successors(aug, 3))
    assert probs == pytest.approx([1 / 11, 10 / 11])
    assert [p for _, p in successors(aug, 0)] == [1.0]


def test_successors_highway(navigation):
    aug = root(navigation, 0.5)
    s = aug.s
    a = next(a for a in navigation.legal_actions[s]
             if navigation.group_names[navigation.branches[s][a][0].group] == "highway")
    assert [p for _, p in successors(aug, a)] == pytest.approx([1 / 2.4, 1 / 2.4, 0.4 / 2.4])


def test_admissibility_examples(fair_coin):
    aug = root(fair_coin, 0.5)
    succ = tuple(s for s, _ in successors(aug, 1))
    assert is_admissible(Perturbation(succ, np.array([1.0, 1.0])), aug, 1)
    assert is_admissible(Perturbation(succ, np.array([2.0, 0.0])), aug, 1)
    assert not is_admissible(Perturbation(succ, np.array([2.2, -0.2])), aug, 1)
    one = root(fair_coin, 1.0)
    assert is_admissible(Perturbation(succ, np.array([1.0, 1.0])), one, 1)
    assert not is_admissible(Perturbation(succ, np.array([1.1, 0.9])), one, 1)


def test_identity_perturbation_keeps_distribution(fair_coin):
    aug = root(fair_coin, 0.3)
    succ = successors(aug, 1)
    dist = perturbed_transition(aug, 1, Perturbation(tuple(s for s, _ in succ), np.ones(2)))
    assert [(a.s, p) for a, p, _ in dist] == [(s, pytest.approx(p)) for s, p in succ]
    assert all(a.y == 0.3 and a.t == 1 for a, _, _ in dist)


def test_budget_multiplies(fair_coin):
    aug = root(fair_coin, 0.2)
    succ = tuple(s for s, _ in successors(aug, 1))
    dist = perturbed_transition(aug, 1, Perturbation(succ, np.array([1.5, 0.5])))
    assert dist[0][0].y == pytest.approx(0.3)
    assert dist[1][0].y == pytest.approx(0.1)


def test_all_mass_on_one_successor(fair_coin):
    aug = root(fair_coin, 0.5)
    succ = tuple(s for s, _ in successors(aug, 1))
    dist = perturbed_transition(aug, 1, Perturbation(succ, np.array([2.0, 0.0])))
    assert len(dist) == 1
    nxt, p, _ = dist[0]
    assert (nxt.s, p, nxt.y) == (succ[0], 1.0, 1.0)


def test_inadmissible_rejected(fair_coin):
    aug = root(fair_coin, 0.5)
    succ = tuple(s for s, _ in successors(aug, 1))
    with pytest.raises(GameError):
        perturbed_transition(aug, 1, Perturbation(succ, np.array([3.0, -1.0])))


def test_random_perturbation_forced_at_y_one(fair_coin, rng):
    xi = random_perturbation(root(fair_coin, 1.0), 1, rng)
    np.testing.assert_array_equal(xi.xi, [1.0, 1.0])


def test_random_perturbation_symmetric(fair_coin, rng):
    aug = root(fair_coin, 0.5)
    x = np.array([random_perturbation(aug, 1, rng).xi[0] for _ in range(100_000)])
    assert abs(x.mean() - 1.0) < 3 * x.std() / np.sqrt(x.size)
    assert abs(np.mean(x > 1.0) - 0.5) < 3 * 0.5 / np.sqrt(x.size)


def test_sample_xi_any_rng():
    import random

    xi = sample_xi([0.2, 0.3, 0.5], 0.25, random.Random(1))
    assert abs(np.dot(xi, [0.2, 0.3, 0.5]) - 1.0) < 1e-12


def test_space_vertices_and_jitter(rng):
    space = PerturbationSpace([0.2, 0.3, 0.5], 4.0)
    V = space.vertices()
    assert space.contains(V).all()
    # the greedy fill puts 1/alpha on the first outcome of each order
    assert any(np.isclose(v[0], 4.0) for v in V)
    J = space.jitter(space.identity(), 0.2, 50, rng)
    assert space.contains(J).all()
    assert space.contains(space.sample(rng, 100)).all()
    assert PerturbationSpace([0.4, 0.6], 1.0).trivial
