"""Gaussian-process regression on ordinal embeddings, and expected
improvement.

Matern-5/2 kernel, zero-mean prior after centering the targets,
hyperparameters picked by exhaustive log-space grid search on the marginal
likelihood.  Everything is dense Cholesky; design sizes here are tens of
points, not thousands.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

log = logging.getLogger(__name__)

JITTER = 1e-8
SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class GpGrid:
    """Multiplier grids; absolute values scale with the data (median
    pairwise distance for the lengthscale, target variance for the rest)."""

    lengthscale_factors: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    signal_factors: tuple[float, ...] = (0.5, 1.0, 2.0)
    noise_factors: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)


def _matern52_profile(r: np.ndarray) -> np.ndarray:
    s = SQRT5 * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def matern52(x1, x2, signal_var: float, lengthscale: float) -> float:
    """Matern-5/2 covariance between two points."""
    r = float(np.linalg.norm(np.asarray(x1, float) - np.asarray(x2, float))) / lengthscale
    return signal_var * float(_matern52_profile(np.asarray(r)))


def _kernel_matrix(
    a: np.ndarray, b: np.ndarray, signal_var: float, lengthscale: float
) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1)) / lengthscale
    return signal_var * _matern52_profile(r)


@dataclass
class GpModel:
    x_train: np.ndarray
    y_mean: float
    signal_var: float
    lengthscale: float
    noise_var: float
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None
    degenerate: bool = False
    log_marginal: float = float("-inf")

    def posterior(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and standard deviation (observation scale) at
        one or more query points."""
        queries = np.atleast_2d(np.asarray(x, dtype=float))
        if self.degenerate:
            mu = np.full(queries.shape[0], self.y_mean)
            sigma = np.full(queries.shape[0], math.sqrt(self.noise_var))
            return mu, sigma
        k_star = _kernel_matrix(queries, self.x_train, self.signal_var, self.lengthscale)
        mu = k_star @ self.alpha + self.y_mean
        v = np.linalg.solve(self.chol, k_star.T)
        var = self.signal_var + self.noise_var - np.sum(v * v, axis=0)
        sigma = np.sqrt(np.maximum(var, 0.0))
        return mu, sigma


def gp_posterior(model: GpModel, x: np.ndarray) -> tuple[float, float]:
    """Scalar convenience wrapper around GpModel.posterior."""
    mu, sigma = model.posterior(np.atleast_2d(x))
    return float(mu[0]), float(sigma[0])


def _median_pairwise_distance(x: np.ndarray) -> float:
    n = x.shape[0]
    dists = []
    for i in range(n):
        for j in range(i + 1, n):
            dists.append(float(np.linalg.norm(x[i] - x[j])))
    if not dists:
        return 1.0
    med = float(np.median(dists))
    return max(med, 1e-8)


def fit_gp(x, y, grid: GpGrid = GpGrid()) -> GpModel:
    """Grid-search hyperparameter fit.

    Maximizes the log marginal likelihood over the grid; exact ties keep
    the smaller lengthscale.  Fewer than two points, or zero target
    variance, yields a constant-mean model whose predictive spread is the
    jitter floor.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y must have matching leading dimension")
    y_mean = float(np.mean(y)) if y.size else 0.0
    var = float(np.var(y)) if y.size else 0.0
    if x.shape[0] < 2 or var == 0.0:
        return GpModel(
            x_train=x,
            y_mean=y_mean,
            signal_var=0.0,
            lengthscale=1.0,
            noise_var=JITTER,
            degenerate=True,
        )
    resid = y - y_mean
    med = _median_pairwise_distance(x)
    n = x.shape[0]
    best: GpModel | None = None
    for ls_factor in grid.lengthscale_factors:
        lengthscale = ls_factor * med
        for sig_factor in grid.signal_factors:
            signal_var = sig_factor * var
            kernel = _kernel_matrix(x, x, signal_var, lengthscale)
            for noise_factor in grid.noise_factors:
                noise_var = noise_factor * var
                k = kernel + (noise_var + JITTER) * np.eye(n)
                try:
                    chol = np.linalg.cholesky(k)
                except np.linalg.LinAlgError:
                    continue
                half = np.linalg.solve(chol, resid)
                lml = (
                    -0.5 * float(half @ half)
                    - float(np.sum(np.log(np.diag(chol))))
                    - 0.5 * n * math.log(2.0 * math.pi)
                )
                if best is None or lml > best.log_marginal:
                    alpha = np.linalg.solve(chol.T, half)
                    best = GpModel(
                        x_train=x,
                        y_mean=y_mean,
                        signal_var=signal_var,
                        lengthscale=lengthscale,
                        noise_var=noise_var,
                        chol=chol,
                        alpha=alpha,
                        log_marginal=lml,
                    )
    if best is None:
        log.warning("gp fit: every grid cell failed to factorize; using constant model")
        return GpModel(
            x_train=x,
            y_mean=y_mean,
            signal_var=0.0,
            lengthscale=med,
            noise_var=JITTER,
            degenerate=True,
        )
    return best


def expected_improvement(mu, sigma, best: float):
    """EI for maximization; at sigma == 0 it collapses to max(mu - best, 0)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    scalar = mu.ndim == 0
    mu = np.atleast_1d(mu)
    sigma = np.atleast_1d(sigma)
    gap = mu - best
    out = np.maximum(gap, 0.0)
    positive = sigma > 0.0
    if np.any(positive):
        z = gap[positive] / sigma[positive]
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        out[positive] = gap[positive] * ndtr(z) + sigma[positive] * pdf
    return float(out[0]) if scalar else out
