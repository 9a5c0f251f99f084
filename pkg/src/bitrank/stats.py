"""Small statistics helpers shared by telemetry, reports, and tests."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps


def spearman(a, b) -> float:
    """Spearman rank correlation; nan when undefined (short or constant input)."""
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.size != y.size:
        raise ValueError("inputs must have equal length")
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    rho = sps.spearmanr(x, y).statistic
    return float(rho)


def paired_one_sided_pvalue(gains) -> float:
    """One-sided paired t-test p-value for mean(gains) > 0."""
    d = np.asarray(gains, dtype=float)
    if d.size < 2:
        raise ValueError("need at least two paired differences")
    if np.all(d == d[0]):
        # Degenerate spread: direction alone decides.
        return 0.0 if d[0] > 0 else 1.0
    result = sps.ttest_1samp(d, 0.0, alternative="greater")
    p = float(result.pvalue)
    return p if math.isfinite(p) else 1.0
