"""Exact GP regression with a Gaussian kernel and LCB candidate search.

Hyperparameters are fixed: zero prior mean, unit signal variance, noise
variance ``noise_var`` and a per-model length scale.  The acquisition
``mu - c_bo * sigma`` is minimised over a finite candidate set drawn from a
:class:`~bacvar.game.PerturbationSpace`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular


def kernel(x: Sequence[float], x2: Sequence[float], lengthscale: float) -> float:
    x, x2 = np.asarray(x, dtype=float), np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    if lengthscale <= 0:
        raise ValueError("lengthscale must be positive")
    d = x - x2
    return float(np.exp(-(d @ d) / (2.0 * lengthscale ** 2)))


def kernel_matrix(A: np.ndarray, B: np.ndarray, lengthscale: float) -> np.ndarray:
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * lengthscale ** 2))


@dataclass
class AcquisitionConfig:
    c_bo: float = 2.0
    num_candidates: int = 64
    num_jitter: int = 16
    jitter_scale: float = 0.5  # in units of the length scale

    def __post_init__(self):
        if self.c_bo < 0 or self.num_candidates < 1:
            raise ValueError("need c_bo >= 0 and num_candidates >= 1")


@dataclass
class GpModel:
    lengthscale: float
    noise_var: float = 1.0
    inputs: List[np.ndarray] = field(default_factory=list)
    labels: List[float] = field(default_factory=list)
    _fit: Optional[Tuple] = field(default=None, repr=False)

    def add(self, x: Sequence[float], label: float) -> None:
        self.inputs.append(np.asarray(x, dtype=float))
        self.labels.append(float(label))
        self._fit = None

    def _factor(self):
        if self._fit is None:
            X = np.vstack(self.inputs)
            K = kernel_matrix(X, X, self.lengthscale) + self.noise_var * np.eye(len(X))
            try:
                c = cho_factor(K, lower=True)
            except LinAlgError as err:
                raise LinAlgError(f"GP kernel matrix is not positive definite: {err}") from err
            self._fit = (X, c, cho_solve(c, np.asarray(self.labels)))
        return self._fit

    def predict(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.inputs:
            return np.zeros(len(X)), np.ones(len(X))
        Xtr, (L, lower), weights = self._factor()
        Ks = kernel_matrix(X, Xtr, self.lengthscale)
        v = solve_triangular(L, Ks.T, lower=lower)
        var = np.maximum(1.0 - (v * v).sum(0), 0.0)
        return Ks @ weights, np.sqrt(var)


def posterior(model: GpModel, x: Sequence[float]) -> Tuple[float, float]:
    mu, sd = model.predict(np.asarray(x, dtype=float)[None, :])
    return float(mu[0]), float(sd[0])


def propose(model: GpModel, space, config: AcquisitionConfig, rng: np.random.Generator) -> np.ndarray:
    """Candidate minimising the LCB ``mu - c_bo * sigma``.

    Candidates: ``num_candidates`` draws from ``space``, the vertices of
    ``space`` and jittered copies of the best observed input.  Random draws
    come first, so a flat acquisition returns a random draw.
    """
    parts = [space.sample(rng, config.num_candidates)]
    if model.inputs:
        parts.append(space.vertices(rng))
        best = model.inputs[int(np.argmin(model.labels))]
        if config.num_jitter:
            parts.append(space.jitter(best, config.jitter_scale * model.lengthscale, config.num_jitter, rng))
    C = np.vstack(parts)
    mu, sd = model.predict(C)
    return C[int(np.argmin(mu - config.c_bo * sd))]


def theoretical_c_bo(t: int, rkhs_bound: float, info_gain: float, delta: float) -> float:
    """Exploration schedule ``sqrt(2B + 300 gamma_t log(t/delta)^3)`` from GP-UCB theory.

    Not used by default: ``B`` and ``gamma_t`` cannot be observed in practice.
    """
    return float(np.sqrt(2.0 * rkhs_bound + 300.0 * info_gain * np.log(t / delta) ** 3))
