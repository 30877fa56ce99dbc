"""Exact Gaussian-process regression baseline with a squared-exponential kernel.

Each output dimension is an independent GP sharing one set of
hyperparameters. The prior mean is zero, so targets should be standardized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from adacnp.errors import ContractError, NumericalError
from adacnp.models.processes import VAR_FLOOR, GaussianPrediction

JITTER = 1e-10
MAX_JITTER = 1e-4


@dataclass(frozen=True)
class GpConfig:
    length_scale: float = 1.0
    signal_var: float = 1.0
    noise_var: float = 1e-2

    def __post_init__(self):
        if not self.length_scale > 0 or not self.signal_var > 0:
            raise ContractError("length scale and signal variance must be positive")
        if self.noise_var < 0:
            raise ContractError("noise variance must be nonnegative")


def sq_dists(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def se_kernel(a, b, cfg):
    return cfg.signal_var * np.exp(-0.5 * sq_dists(a, b) / cfg.length_scale ** 2)


def _factor(K, scale):
    """Cholesky of ``K`` with escalating diagonal jitter relative to ``scale``."""
    jitter = JITTER
    eye = np.eye(K.shape[0])
    while jitter <= MAX_JITTER:
        try:
            return cho_factor(K + jitter * scale * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"kernel matrix not positive definite after jitter {MAX_JITTER:g}; "
        f"condition number {np.linalg.cond(K):.3e}"
    )


def gp_predict(cfg, ctx, targets, var_floor=VAR_FLOOR):
    """Posterior predictive mean and variance (observation noise included)."""
    x, y = ctx.inputs, ctx.outputs
    xs = targets.inputs
    K = se_kernel(x, x, cfg) + cfg.noise_var * np.eye(len(x))
    factor, _ = _factor(K, cfg.signal_var)
    Ks = se_kernel(xs, x, cfg)
    mean = Ks @ cho_solve(factor, y)
    v = cho_solve(factor, Ks.T)
    latent = cfg.signal_var - np.einsum("ij,ji->i", Ks, v)
    var = np.maximum(latent + cfg.noise_var, var_floor)
    return GaussianPrediction(mean, np.repeat(var[:, None], y.shape[1], axis=1))


def log_marginal_likelihood(cfg, ctx):
    x, y = ctx.inputs, ctx.outputs
    n, d = y.shape
    K = se_kernel(x, x, cfg) + cfg.noise_var * np.eye(n)
    factor, _ = _factor(K, cfg.signal_var)
    alpha = cho_solve(factor, y)
    logdet = 2.0 * np.log(np.diag(factor[0])).sum()
    return float(-0.5 * (y * alpha).sum() - 0.5 * d * logdet - 0.5 * n * d * np.log(2 * np.pi))


LENGTH_GRID = np.logspace(-1.5, 1.5, 13)
NOISE_RATIO_GRID = np.logspace(-4, 0, 9)


def fit_gp(ctx, length_grid=LENGTH_GRID, ratio_grid=NOISE_RATIO_GRID):
    """Maximise the marginal likelihood over a fixed logarithmic grid.

    Length scales are multiples of the median pairwise context distance and
    the noise is a multiple of the signal variance. For each grid point the
    signal variance is set to its closed-form maximiser.
    """
    x, y = ctx.inputs, ctx.outputs
    n, d = y.shape
    dists = np.sqrt(sq_dists(x, x))
    off = dists[np.triu_indices(n, 1)]
    base = float(np.median(off)) if off.size and np.median(off) > 0 else 1.0
    best, best_ll = None, -np.inf
    for ell in base * np.asarray(length_grid):
        unit = np.exp(-0.5 * dists ** 2 / ell ** 2)
        for ratio in ratio_grid:
            try:
                factor, _ = _factor(unit + ratio * np.eye(n), 1.0)
            except NumericalError:
                continue
            alpha = cho_solve(factor, y)
            signal = max(float((y * alpha).sum()) / (n * d), 1e-12)
            logdet = 2.0 * np.log(np.diag(factor[0])).sum() + n * np.log(signal)
            ll = -0.5 * n * d - 0.5 * d * logdet - 0.5 * n * d * np.log(2 * np.pi)
            if ll > best_ll:
                best_ll, best = ll, GpConfig(float(ell), signal, signal * float(ratio))
    if best is None:
        raise NumericalError("no grid point produced a positive-definite kernel")
    return best
