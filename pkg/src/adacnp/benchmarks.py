"""The two end-to-end experiments: the 1-D phase-transition toy and extreme load days.

Both are plain functions of a frozen config and a seed so they can be driven
from tests, demos and the command line alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adacnp.detect import detect_extremes
from adacnp.loaddata import (
    SyntheticLoadConfig, build_day_records, load_bundled, make_synthetic_hourly,
    split_and_standardize,
)
from adacnp.metrics import DECILES, evaluate_prediction
from adacnp.models.bundle import ModelConfig
from adacnp.models.processes import ContextSet, GaussianPrediction, TargetBatch, predict
from adacnp.synth import TaskConfig, sample_points, sample_task
from adacnp.training import GpBaseline, Pool, TrainConfig, evaluate, train

# Task ranges for the benchmark suite. Amplitudes and noise levels are below
# the library defaults so that sixteen contexts pin a task down well.
TOY_TASKS = TaskConfig(
    slope=(-1.0, 1.0),
    amplitude=(0.2, 0.5),
    frequency=(0.25, 0.5),
    noise_normal=(5e-4, 2e-3),
    noise_extreme=(2e-3, 8e-3),
)

SMALL_MODEL = ModelConfig(
    d_e=16, d_r=64, encoder_hidden=(64, 64), decoder_hidden=(64, 64),
    embedding_hidden=(32,), scorer_hidden=(32,),
)


@dataclass(frozen=True)
class ToyBenchmark:
    tasks: TaskConfig = TOY_TASKS
    model: ModelConfig = SMALL_MODEL
    iterations: int = 20000
    lr: float = 1e-3
    lr_final: float | None = 1e-5
    nc_range: tuple = (5, 20)
    nt_range: tuple = (10, 20)
    points_per_task: int = 40
    test_tasks: int = 300
    test_points: int = 50
    n_c: int = 16
    scale_tasks: int = 2000
    scale_seed: int = 123


@dataclass(frozen=True)
class ToyResult:
    kind: str
    seed: int
    mse_percent: float
    nll: float
    pinball: float
    mse_normal: float
    mse_extreme: float
    final_loss: float


def toy_scale(bench):
    """Mean and standard deviation of y over the task family, from a fixed draw."""
    rng = np.random.default_rng(bench.scale_seed)
    ys = np.concatenate([
        sample_points(sample_task(rng, bench.tasks), 100, rng).y for _ in range(bench.scale_tasks)
    ])
    return float(ys.mean()), float(ys.std())


def toy_train_pool(bench, scale):
    mu, sd = scale

    def draw(rng):
        s = sample_points(sample_task(rng, bench.tasks), bench.points_per_task, rng)
        return Pool(s.x, (s.y - mu) / sd)

    return draw


def toy_test_set(bench, scale, seed):
    """Held-out tasks as ``(context, targets, extreme_mask)`` triples."""
    mu, sd = scale
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    out = []
    for _ in range(bench.test_tasks):
        s = sample_points(sample_task(rng, bench.tasks), bench.n_c + bench.test_points, rng)
        y = (s.y - mu) / sd
        ctx = ContextSet(s.x[:bench.n_c, None], y[:bench.n_c, None])
        tgt = TargetBatch(s.x[bench.n_c:, None], y[bench.n_c:, None])
        out.append((ctx, tgt, s.extreme[bench.n_c:]))
    return out


def toy_evaluate(predictor, test_set):
    means, variances, truths, extreme = [], [], [], []
    for ctx, tgt, ext in test_set:
        pred = predictor(ctx, tgt)
        means.append(pred.mean)
        variances.append(pred.var)
        truths.append(tgt.outputs)
        extreme.append(ext)
    m, v, y = np.vstack(means), np.vstack(variances), np.vstack(truths)
    ext = np.concatenate(extreme)
    mse, nll, pin = evaluate_prediction(GaussianPrediction(m, v), y)
    sq = (m - y)[:, 0] ** 2
    return mse, nll, pin, 100 * float(sq[~ext].mean()), 100 * float(sq[ext].mean())


def run_toy(bench, kind, seed, scale=None, test_set=None):
    """Train one model on the task family and score it on held-out tasks."""
    scale = scale or toy_scale(bench)
    test_set = test_set if test_set is not None else toy_test_set(bench, scale, seed)
    if kind == "gp":
        metrics, loss = toy_evaluate(GpBaseline(), test_set), float("nan")
    else:
        cfg = TrainConfig(iterations=bench.iterations, nc_range=bench.nc_range,
                          nt_range=bench.nt_range, lr=bench.lr, lr_final=bench.lr_final, seed=seed)
        bundle, curve = train(kind, toy_train_pool(bench, scale), cfg, bench.model)
        metrics = toy_evaluate(lambda c, t: predict(bundle, c, t), test_set)
        loss = curve.moving[-1]
    return ToyResult(kind, seed, *metrics, loss)


# --- extreme load days ---------------------------------------------------------

@dataclass(frozen=True)
class LoadBenchmark:
    fixture: SyntheticLoadConfig | None = None  # None reads the bundled files
    half_window: int = 7
    k: float = 3.0
    test_fraction: float = 0.2
    model: ModelConfig = SMALL_MODEL
    iterations: int = 3000
    lr: float = 1e-3
    lr_final: float | None = 1e-5
    nc_range: tuple = (8, 24)
    nt_range: tuple = (8, 16)
    n_c: int = 16
    extreme_context: int = 2
    extreme_target: int = 0
    resamples: int = 10


@dataclass(frozen=True)
class LoadData:
    records: object
    labeling: object
    injected: tuple


def load_fixture_data(bench):
    if bench.fixture is None:
        series, injected = load_bundled()
    else:
        series, injected = make_synthetic_hourly(bench.fixture)
    records = build_day_records(series)
    labeling = detect_extremes(records.curves, bench.half_window, bench.k)
    return LoadData(records, labeling, tuple(injected))


def run_load(bench, seed, data=None, kinds=("cnp", "adacnp", "gp")):
    """Split, train each model on historical days, score on held-out extreme days.

    Returns ``{kind: MetricsReport}``.
    """
    data = data or load_fixture_data(bench)
    split = split_and_standardize(data.records, data.labeling.extreme, bench.test_fraction, seed)
    hist = split.historical()
    test = split.pool("test_extreme")
    reports = {}
    for kind in kinds:
        if kind == "gp":
            model = GpBaseline()
        else:
            cfg = TrainConfig(iterations=bench.iterations, nc_range=bench.nc_range,
                              nt_range=bench.nt_range, lr=bench.lr, lr_final=bench.lr_final,
                              seed=seed,
                              extreme_context=bench.extreme_context,
                              extreme_target=bench.extreme_target)
            model, _ = train(kind, hist, cfg, bench.model)
        reports[kind] = evaluate(model, hist, test, n_c=bench.n_c, resamples=bench.resamples,
                                 seed=seed, extreme_context=bench.extreme_context,
                                 levels=DECILES).report
    return reports


__all__ = [
    "TOY_TASKS", "SMALL_MODEL", "ToyBenchmark", "ToyResult", "toy_scale", "toy_train_pool",
    "toy_test_set", "toy_evaluate", "run_toy", "LoadBenchmark", "LoadData",
    "load_fixture_data", "run_load",
]
