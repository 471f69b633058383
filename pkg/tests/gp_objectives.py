"""Smooth test objectives on the 2-simplex for the GP-LCB convergence check."""
import numpy as np

from bacvar.game import PerturbationSpace
from bacvar.gp import AcquisitionConfig, GpModel, propose


def smooth_function(seed, lengthscale=0.3, num_features=500):
    """Random-Fourier-feature draw that approximates a GP prior sample with an RBF kernel."""
    r = np.random.default_rng([seed, 99])
    W = r.normal(scale=1.0 / lengthscale, size=(num_features, 3))
    b = r.uniform(0.0, 2.0 * np.pi, num_features)
    c = r.normal(size=num_features)
    return lambda X: np.sqrt(2.0 / num_features) * np.cos(np.atleast_2d(X) @ W.T + b) @ c


def simplex_grid(n=100):
    return np.array([(i / n, j / n, 1.0 - (i + j) / n) for i in range(n + 1) for j in range(n + 1 - i)])


def lcb_reaches_optimum(seed, rounds=200, tolerance=0.05, lengthscale=0.3):
    """Run propose/observe and report whether the best label gets within ``tolerance * range`` of the grid minimum."""
    f = smooth_function(seed, lengthscale)
    fg = f(simplex_grid())
    target = fg.min() + tolerance * (fg.max() - fg.min())
    space = PerturbationSpace(np.ones(3), 1.0)
    model = GpModel(lengthscale=lengthscale)
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(rounds):
        x = propose(model, space, AcquisitionConfig(c_bo=2.0), rng)
        y = float(f(x)[0])
        model.add(x, y)
        best = min(best, y)
        if best <= target:
            return True
    return False
