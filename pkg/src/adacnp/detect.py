"""Extreme-day detection by DTW distance within a sliding window of days."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adacnp.errors import ContractError

LOCAL_COSTS = {
    "abs": lambda a, b: np.abs(a[:, None] - b[None, :]),
    "sq": lambda a, b: (a[:, None] - b[None, :]) ** 2,
}


def dtw_distance(a, b, cost="abs", band=None):
    """Classic DTW with unit match/insert/delete steps.

    ``band`` limits ``|i - j|`` (Sakoe-Chiba); ``None`` means the full matrix.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ContractError("DTW needs two nonempty sequences")
    n, m = a.size, b.size
    if band is not None and band < abs(n - m):
        raise ContractError(f"band {band} is narrower than the length difference {abs(n - m)}")
    local = LOCAL_COSTS[cost](a, b).tolist()
    inf = float("inf")
    prev = [0.0] + [inf] * m
    for i in range(n):
        lo, hi = 0, m
        if band is not None:
            lo, hi = max(0, i - band), min(m, i + band + 1)
        row = [inf] * (m + 1)
        cost_row = local[i]
        left = inf
        for j in range(lo, hi):
            best = prev[j]
            if prev[j + 1] < best:
                best = prev[j + 1]
            if left < best:
                best = left
            left = cost_row[j] + best
            row[j + 1] = left
        prev = row
    return float(prev[m])


@dataclass(frozen=True)
class ExtremeLabeling:
    extreme: np.ndarray
    score: np.ndarray
    window_mean: np.ndarray
    window_std: np.ndarray
    k: float

    @property
    def n_extreme(self):
        return int(self.extreme.sum())


def _window(d, n, half):
    return range(max(0, d - half), min(n, d + half + 1))


def detect_extremes(days, half_window=7, k=3.0, cost="abs", band=None,
                    normalize=False, include_self=True):
    """Label days whose mean DTW distance to their window is an outlier.

    ``days`` is an (n_days, 24) array in date order. A day's score is its mean
    distance to the other days within ``half_window`` of it (truncated at the
    series ends). The day is extreme when its score exceeds the mean plus
    ``k`` standard deviations of the scores of its window's members.
    """
    days = np.asarray(days, dtype=np.float64)
    if days.ndim != 2:
        raise ContractError(f"expected a 2-D array of daily curves, got shape {days.shape}")
    n = days.shape[0]
    if n < 2 * half_window + 1:
        raise ContractError(f"need at least {2 * half_window + 1} days, got {n}")
    if not np.all(np.isfinite(days)):
        raise ContractError("daily curves must be finite")
    if normalize:
        scale = days.mean(axis=1, keepdims=True)
        if np.any(scale == 0):
            raise ContractError("cannot normalize a day with zero mean load")
        days = days / scale

    cache = {}

    def dist(i, j):
        key = (i, j) if i < j else (j, i)
        if key not in cache:
            cache[key] = dtw_distance(days[key[0]], days[key[1]], cost, band)
        return cache[key]

    score = np.empty(n)
    for d in range(n):
        score[d] = np.mean([dist(d, o) for o in _window(d, n, half_window) if o != d])

    w_mean = np.empty(n)
    w_std = np.empty(n)
    for d in range(n):
        members = [o for o in _window(d, n, half_window) if include_self or o != d]
        vals = score[members]
        w_mean[d] = vals.mean()
        w_std[d] = vals.std()
    with np.errstate(invalid="ignore"):
        extreme = score > w_mean + k * w_std
    return ExtremeLabeling(extreme, score, w_mean, w_std, float(k))
