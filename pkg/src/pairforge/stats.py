"""Correlation statistics used by the judge-score analysis."""

from __future__ import annotations

import numpy as np


def pearson_r(x, y) -> float:
    """Plain product-moment correlation in double precision."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson_r needs two equal-length 1-d vectors of size >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0:
        raise ValueError("pearson_r undefined for a constant vector")
    return float((dx * dy).sum() / denom)


def kendall_tau_b(x, y) -> float:
    """Kendall tau-b with tie correction.

    tau_b = (C - D) / sqrt((n0 - n1) (n0 - n2)) with n0 = n(n-1)/2 and
    n1/n2 the tied-pair counts of each vector.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("kendall_tau_b needs two equal-length 1-d vectors of size >= 2")
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(x.size, k=1)
    s = float((sx[iu] * sy[iu]).sum())
    n0 = x.size * (x.size - 1) / 2
    n1 = float((sx[iu] == 0).sum())
    n2 = float((sy[iu] == 0).sum())
    denom = np.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0:
        raise ValueError("kendall_tau_b undefined: a vector is entirely tied")
    return float(s / denom)
