import numpy as np
import pytest

from bacvar.game import PerturbationSpace
from bacvar.gp import AcquisitionConfig, GpModel, kernel, kernel_matrix, posterior, propose, theoretical_c_bo
from gp_objectives import lcb_reaches_optimum


def test_kernel_examples(rng):
    x = rng.normal(size=3)
    assert kernel(x, x, 0.7) == 1.0
    d = rng.normal(size=3)
    d *= 0.7 * np.sqrt(2) / np.linalg.norm(d)
    assert kernel(x, x + d, 0.7) == pytest.approx(np.exp(-1.0))
    for _ in range(20):
        a, b = rng.normal(size=(2, 4))
        assert kernel(a, b, 1.3) == kernel(b, a, 1.3)


def test_empty_model_prior():
    assert posterior(GpModel(lengthscale=1.0), [0.2, 0.3]) == (0.0, 1.0)


def test_single_observation_mean():
    m = GpModel(lengthscale=1.0)
    m.add([1.0, 1.0], 3.0)
    mu, sd = posterior(m, [1.0, 1.0])
    assert mu == pytest.approx(1.5)
    assert sd == pytest.approx(np.sqrt(0.5))


def test_posterior_matches_dense_solve(rng):
    X = rng.normal(size=(5, 3))
    y = rng.normal(size=5) * 4
    m = GpModel(lengthscale=0.8)
    for x, label in zip(X, y):
        m.add(x, label)
    # independent oracle: explicit inverse, no Cholesky
    K = np.array([[np.exp(-np.sum((a - b) ** 2) / (2 * 0.8 ** 2)) for b in X] for a in X]) + np.eye(5)
    Kinv = np.linalg.inv(K)
    for x in list(X) + list(rng.normal(size=(5, 3))):
        k = np.array([np.exp(-np.sum((x - b) ** 2) / (2 * 0.8 ** 2)) for b in X])
        mu, sd = posterior(m, x)
        assert mu == pytest.approx(k @ Kinv @ y, abs=1e-10)
        assert sd ** 2 == pytest.approx(1.0 - k @ Kinv @ k, abs=1e-10)


def test_sigma_shrinks_after_observation(rng):
    m = GpModel(lengthscale=0.5)
    for _ in range(30):
        x = rng.normal(size=2)
        before = posterior(m, x)[1]
        m.add(x, rng.normal())
        assert posterior(m, x)[1] <= before + 1e-12


def test_kernel_matrix_positive_definite(rng):
    X = rng.normal(size=(20, 3))
    K = kernel_matrix(X, X, 0.4) + np.eye(20)
    np.testing.assert_allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() > 0


def test_empty_model_returns_sampler_draw():
    space = PerturbationSpace([0.2, 0.3, 0.5], 4.0)
    x = propose(GpModel(lengthscale=1.0), space, AcquisitionConfig(), np.random.default_rng(3))
    first = space.sample(np.random.default_rng(3), 64)[0]
    np.testing.assert_allclose(x, first)


def test_pure_exploitation_picks_low_label(rng):
    space = PerturbationSpace([0.5, 0.5], 2.0)
    m = GpModel(lengthscale=0.2)
    m.add([2.0, 0.0], -100.0)
    m.add([1.0, 1.0], 0.0)
    x = propose(m, space, AcquisitionConfig(c_bo=0.0), rng)
    assert np.linalg.norm(x - np.array([2.0, 0.0])) < 0.2


def test_proposals_admissible(rng):
    space = PerturbationSpace([0.1, 0.2, 0.3, 0.4], 5.0)
    m = GpModel(lengthscale=0.3)
    for _ in range(40):
        x = propose(m, space, AcquisitionConfig(), rng)
        assert space.contains(x).all()
        m.add(x, rng.normal())


def test_theoretical_schedule_grows():
    assert theoretical_c_bo(10, 1.0, 2.0, 0.1) < theoretical_c_bo(100, 1.0, 2.0, 0.1)


def test_lcb_convergence_on_smooth_objective():
    assert sum(lcb_reaches_optimum(seed) for seed in range(5)) >= 4
