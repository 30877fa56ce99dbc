"""Evaluation metrics: percentage MSE, Gaussian NLL and Gaussian pinball loss."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from adacnp.errors import ContractError, DataError, DimensionError
from adacnp.models.processes import GaussianPrediction, gaussian_nll

DECILES = tuple(round(0.1 * k, 1) for k in range(1, 10))

# Wichura (1988), algorithm AS 241 (PPND16), ~1e-16 relative accuracy.
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


def _poly(coeffs, x):
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def norm_ppf(p):
    """Inverse of the standard normal CDF for a scalar ``p`` in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ContractError(f"probability must lie in (0, 1), got {p}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0 else val


def _pair(pred_means, truths):
    m = np.asarray(pred_means, dtype=np.float64)
    y = np.asarray(truths, dtype=np.float64)
    if m.shape != y.shape:
        raise DimensionError(f"prediction shape {m.shape} does not match truth shape {y.shape}")
    return m, y


def mse_percent(pred_means, truths):
    """Mean squared error on standardized targets, times 100."""
    m, y = _pair(pred_means, truths)
    return float(100.0 * np.mean((y - m) ** 2))


def nll_mean(pred, truths):
    return float(gaussian_nll(pred, truths))


def pinball(pred, truths, levels=DECILES):
    """Pinball loss of Gaussian quantile forecasts averaged over points, dims and levels."""
    m, y = _pair(pred.mean, truths)
    s = np.sqrt(np.asarray(pred.var, dtype=np.float64))
    if np.any(s <= 0):
        raise ContractError("predictive variance must be positive")
    total = 0.0
    for q in levels:
        if not 0.0 < q < 1.0:
            raise ContractError(f"quantile level {q} outside (0, 1)")
        diff = y - (m + s * norm_ppf(q))
        total += float(np.mean(np.maximum(q * diff, (q - 1.0) * diff)))
    return total / len(levels)


@dataclass(frozen=True)
class MetricsReport:
    """Metric means with their spread (standard deviation over resamples)."""

    mse_percent: float
    nll: float
    pinball: float
    mse_percent_spread: float = 0.0
    nll_spread: float = 0.0
    pinball_spread: float = 0.0
    n_points: int = 0
    n_resamples: int = 1
    spread: str = "std over context resamples"

    @classmethod
    def from_runs(cls, runs, n_points):
        """Aggregate a list of ``(mse_percent, nll, pinball)`` tuples."""
        arr = np.asarray(runs, dtype=np.float64).reshape(-1, 3)
        mean = arr.mean(0)
        std = arr.std(0)
        return cls(*map(float, mean), *map(float, std), n_points=int(n_points),
                   n_resamples=len(arr))

    def to_text(self):
        lines = []
        for name in ("mse_percent", "nll", "pinball"):
            lines.append(
                f"{name}: mean={getattr(self, name)!r} "
                f"spread={getattr(self, name + '_spread')!r} count={self.n_points}"
            )
        lines.append(f"resamples: {self.n_resamples}")
        lines.append(f"spread_definition: {self.spread}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        vals = {}
        resamples, spread = 1, cls.spread
        count = 0
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            key, _, rest = line.partition(":")
            key, rest = key.strip(), rest.strip()
            if key in ("mse_percent", "nll", "pinball"):
                fields = dict(tok.split("=", 1) for tok in rest.split())
                vals[key] = float(fields["mean"])
                vals[key + "_spread"] = float(fields["spread"])
                count = int(fields["count"])
            elif key == "resamples":
                resamples = int(rest)
            elif key == "spread_definition":
                spread = rest
        missing = {"mse_percent", "nll", "pinball"} - vals.keys()
        if missing:
            raise DataError(f"metrics report missing {sorted(missing)}")
        return cls(**vals, n_points=count, n_resamples=resamples, spread=spread)

    def as_dict(self):
        return asdict(self)


def evaluate_prediction(pred: GaussianPrediction, truths, levels=DECILES):
    return (mse_percent(pred.mean, truths), nll_mean(pred, truths), pinball(pred, truths, levels))
