"""One-dimensional regression tasks with a regime switch at a threshold.

Below the threshold ``x_c`` the mean is linear; above it the mean is a
sinusoid offset so that both pieces agree at ``x_c``. Each regime has its own
constant noise variance.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from adacnp.errors import ContractError, DataError


@dataclass(frozen=True)
class TaskConfig:
    """Sampling ranges for task coefficients. ``(lo, hi)`` pairs are inclusive
    of ``lo``; a pair with ``lo == hi`` pins the coefficient."""

    x_c: float = 1.0
    x_range: tuple = (-2.0, 3.0)
    slope: tuple = (-2.0, 2.0)
    intercept: tuple = (-1.0, 1.0)
    amplitude: tuple = (0.5, 2.0)
    frequency: tuple = (0.5, 2.0)
    phase: tuple = (0.0, 2.0 * math.pi)
    noise_normal: tuple = (0.01, 0.09)
    noise_extreme: tuple = (0.04, 0.25)

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                lo, hi = val
                if not lo <= hi:
                    raise ContractError(f"range {f.name}={val} is empty")
        lo, hi = self.x_range
        if not lo < self.x_c < hi:
            raise ContractError(f"threshold {self.x_c} must lie strictly inside {self.x_range}")
        if self.noise_normal[0] < 0 or self.noise_extreme[0] < 0:
            raise ContractError("noise variances must be nonnegative")


@dataclass(frozen=True)
class PhaseTransitionTask:
    x_c: float
    slope: float
    intercept: float
    amplitude: float
    frequency: float
    phase: float
    noise_normal: float
    noise_extreme: float
    x_lo: float
    x_hi: float

    def mean_normal(self, x):
        return self.slope * np.asarray(x, dtype=np.float64) + self.intercept

    def mean_extreme(self, x):
        x = np.asarray(x, dtype=np.float64)
        arg = 2.0 * math.pi * self.frequency * (x - self.x_c) + self.phase
        anchor = self.slope * self.x_c + self.intercept
        return anchor + self.amplitude * (np.sin(arg) - math.sin(self.phase))

    def mean(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x <= self.x_c, self.mean_normal(x), self.mean_extreme(x))

    def noise_var(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x <= self.x_c, self.noise_normal, self.noise_extreme)

    def to_text(self):
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text):
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise DataError(f"malformed task line {line!r}")
            values[key.strip()] = float(val)
        return cls(**values)


@dataclass(frozen=True)
class TaskSample:
    x: np.ndarray
    y: np.ndarray
    extreme: np.ndarray

    def __len__(self):
        return len(self.x)


def sample_task(rng, config=None):
    config = config or TaskConfig()
    u = lambda r: float(r[0]) if r[0] == r[1] else float(rng.uniform(*r))
    return PhaseTransitionTask(
        x_c=config.x_c,
        slope=u(config.slope),
        intercept=u(config.intercept),
        amplitude=u(config.amplitude),
        frequency=u(config.frequency),
        phase=u(config.phase),
        noise_normal=u(config.noise_normal),
        noise_extreme=u(config.noise_extreme),
        x_lo=float(config.x_range[0]),
        x_hi=float(config.x_range[1]),
    )


def label_extreme(x, x_c):
    return np.asarray(x) > x_c


def sample_points(task, n, rng):
    if n < 1:
        raise ContractError(f"need at least one point, got {n}")
    x = rng.uniform(task.x_lo, task.x_hi, size=n)
    y = task.mean(x) + np.sqrt(task.noise_var(x)) * rng.standard_normal(n)
    return TaskSample(x, y, label_extreme(x, task.x_c))


def write_sample(sample, path, header=""):
    with open(path, "w") as fh:
        fh.write(header)
        fh.write("# x y label\n")
        for x, y, e in zip(sample.x.tolist(), sample.y.tolist(), sample.extreme.tolist()):
            fh.write(f"{x!r} {y!r} {'extreme' if e else 'normal'}\n")


def read_sample(path):
    xs, ys, labels = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#") or not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] not in ("normal", "extreme"):
                raise DataError(f"line {lineno}: expected 'x y label'")
            try:
                xs.append(float(parts[0]))
                ys.append(float(parts[1]))
            except ValueError:
                raise DataError(f"line {lineno}: non-numeric value") from None
            labels.append(parts[2] == "extreme")
    return TaskSample(np.array(xs), np.array(ys), np.array(labels))
