"""Robust linear screening surrogate.

Maps cheap low-fidelity features (measured score at the current rung, log
total memory, ordinal embedding) to the top-rung score.  Fit by iteratively
reweighted least squares under the Huber loss with a ridge term; stays
untrained below a minimum pair count, in which case promotion falls back
to the measured low-fidelity ranking.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_HUBER_DELTA = 0.1
DEFAULT_RIDGE = 1e-8
DEFAULT_MIN_PAIRS = 8
IRLS_MAX_ITER = 100
IRLS_TOL = 1e-8


def surrogate_features(
    lf_score: float, memory_bytes: int, embedding: np.ndarray
) -> np.ndarray:
    """Feature vector: [low-fidelity score, log memory, embedding coords]."""
    return np.concatenate(([float(lf_score), math.log(memory_bytes)], embedding))


@dataclass
class ScreeningSurrogate:
    stage_steps: int
    huber_delta: float = DEFAULT_HUBER_DELTA
    ridge: float = DEFAULT_RIDGE
    pair_count: int = 0
    weights: np.ndarray | None = None
    feature_mean: np.ndarray | None = field(default=None, repr=False)
    feature_std: np.ndarray | None = field(default=None, repr=False)

    @property
    def trained(self) -> bool:
        return self.weights is not None

    def predict(self, features: np.ndarray) -> np.ndarray:
        if not self.trained:
            raise RuntimeError("surrogate is untrained")
        x = np.atleast_2d(np.asarray(features, dtype=float))
        xs = (x - self.feature_mean) / self.feature_std
        design = np.hstack([np.ones((xs.shape[0], 1)), xs])
        out = design @ self.weights
        return out if np.asarray(features).ndim > 1 else float(out[0])


def _solve_weighted(
    design: np.ndarray, y: np.ndarray, sample_w: np.ndarray, ridge: float
) -> np.ndarray | None:
    """Ridge-regularized weighted normal equations; None if unsolvable
    after widening the ridge three times."""
    wx = design * sample_w[:, None]
    gram = design.T @ wx
    rhs = wx.T @ y
    lam = ridge
    for _ in range(4):
        try:
            theta = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), rhs)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        if np.all(np.isfinite(theta)):
            return theta
        lam *= 10.0
    return None


def fit_screening_surrogate(
    features: np.ndarray,
    targets: np.ndarray,
    stage_steps: int,
    huber_delta: float = DEFAULT_HUBER_DELTA,
    ridge: float = DEFAULT_RIDGE,
    min_pairs: int = DEFAULT_MIN_PAIRS,
) -> ScreeningSurrogate:
    """Fit the Huber-loss linear map from features to top-rung scores.

    Features are standardized by training mean/std (constant columns get
    std 1).  IRLS stops when the max-abs parameter change drops below
    1e-8 or after 100 iterations.  Fewer than ``min_pairs`` rows, or a
    Gram matrix that stays singular after ridge widening, leaves the
    surrogate untrained.
    """
    model = ScreeningSurrogate(
        stage_steps=stage_steps, huber_delta=huber_delta, ridge=ridge
    )
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    model.pair_count = x.shape[0]
    if x.shape[0] < min_pairs:
        return model

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std
    design = np.hstack([np.ones((xs.shape[0], 1)), xs])

    theta = _solve_weighted(design, y, np.ones(len(y)), ridge)
    if theta is None:
        log.warning("surrogate fit at %d steps: singular system, left untrained",
                    stage_steps)
        return model
    for _ in range(IRLS_MAX_ITER):
        resid = y - design @ theta
        absr = np.abs(resid)
        sample_w = np.where(absr <= huber_delta, 1.0, huber_delta / np.maximum(absr, 1e-300))
        new_theta = _solve_weighted(design, y, sample_w, ridge)
        if new_theta is None:
            log.warning("surrogate fit at %d steps: singular reweighted system,"
                        " left untrained", stage_steps)
            return model
        delta = float(np.max(np.abs(new_theta - theta)))
        theta = new_theta
        if delta < IRLS_TOL:
            break

    model.weights = theta
    model.feature_mean = mean
    model.feature_std = std
    return model
