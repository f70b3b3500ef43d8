"""Closed-form expected hypervolume improvement for two minimised objectives."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import norm

from .pareto import nondominated


def _partial_expectation(t: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """``E[(t - Y)^+]`` for ``Y ~ N(mu, sigma^2)``; ``t = -inf`` gives 0."""
    t, mu, sigma = np.broadcast_arrays(np.asarray(t, float), np.asarray(mu, float), np.asarray(sigma, float))
    out = np.zeros(t.shape)
    finite = np.isfinite(t)
    det = finite & (sigma <= 0)
    out[det] = np.maximum(t[det] - mu[det], 0.0)
    sto = finite & (sigma > 0)
    z = (t[sto] - mu[sto]) / sigma[sto]
    out[sto] = (t[sto] - mu[sto]) * norm.cdf(z) + sigma[sto] * norm.pdf(z)
    return out


def ehvi(mu: Sequence[float] | np.ndarray, sigma: Sequence[float] | np.ndarray,
         front: Sequence[Sequence[float]], ref: Sequence[float]) -> np.ndarray:
    """Expected hypervolume gain of a Gaussian point over ``front`` within ``ref``.

    ``mu`` and ``sigma`` have shape ``(2,)`` or ``(N, 2)`` (standard
    deviations, objectives independent). The non-dominated region is split
    into vertical strips between consecutive front points; in each strip the
    gain factorises into a product of one-dimensional partial expectations.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    r1, r2 = float(ref[0]), float(ref[1])
    pts = [p for p in nondominated(front) if p[0] < r1 and p[1] < r2]
    lows = [-np.inf] + [p[0] for p in pts]
    highs = [p[0] for p in pts] + [r1]
    caps = [r2] + [p[1] for p in pts]
    m1, s1, m2, s2 = mu[:, 0], sigma[:, 0], mu[:, 1], sigma[:, 1]
    total = np.zeros(len(mu))
    for lo, hi, cap in zip(lows, highs, caps):
        width = _partial_expectation(hi, m1, s1) - _partial_expectation(lo, m1, s1)
        total += width * _partial_expectation(cap, m2, s2)
    return np.maximum(total, 0.0)
