"""Episode sampling, end-to-end training and leakage-safe evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from adacnp.core.autodiff import Tape, backward
from adacnp.core.optim import AdamState, optimizer_step
from adacnp.errors import ContractError, DataError, NumericalError
from adacnp.metrics import DECILES, MetricsReport, evaluate_prediction
from adacnp.models.bundle import ModelBundle, ModelConfig, init_bundle, save_bundle
from adacnp.models.gp import GpConfig, fit_gp, gp_predict
from adacnp.models.processes import (
    ContextSet, GaussianPrediction, TargetBatch, gaussian_nll, predict,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pool:
    """Rows of paired inputs and outputs, optionally flagged extreme."""

    x: np.ndarray
    y: np.ndarray
    extreme: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        x = x[:, None] if x.ndim == 1 else x
        y = y[:, None] if y.ndim == 1 else y
        if x.shape[0] != y.shape[0]:
            raise DataError(f"{x.shape[0]} inputs but {y.shape[0]} outputs")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.extreme is not None:
            e = np.asarray(self.extreme, dtype=bool)
            if e.shape != (x.shape[0],):
                raise DataError("extreme flags must have one entry per row")
            object.__setattr__(self, "extreme", e)

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        return Pool(self.x[idx], self.y[idx], None if self.extreme is None else self.extreme[idx])


@dataclass(frozen=True)
class Episode:
    context: ContextSet
    targets: TargetBatch
    context_idx: np.ndarray
    target_idx: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    nc_range: tuple = (5, 20)
    nt_range: tuple = (10, 20)
    lr: float = 1e-3
    lr_final: float | None = None  # cosine decay from lr to this; None keeps lr constant
    tau: float = 1.0
    seed: int = 0
    log_stride: int = 1
    window: int = 100
    extreme_context: int = 0
    extreme_target: int = 0
    checkpoint_path: str | None = None

    def lr_at(self, it):
        """Learning rate of iteration ``it`` (1-based)."""
        if self.lr_final is None or self.iterations == 1:
            return self.lr
        frac = (it - 1) / (self.iterations - 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + math.cos(math.pi * frac))

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("iterations must be at least 1")
        for name in ("nc_range", "nt_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ContractError(f"{name}={getattr(self, name)} must satisfy 1 <= lo <= hi")
        if self.lr < 0 or (self.lr_final is not None and self.lr_final < 0):
            raise ContractError("learning rate must be nonnegative")
        if not self.tau > 0:
            raise ContractError("temperature must be positive")
        if self.extreme_context < 0 or self.extreme_target < 0:
            raise ContractError("extreme quotas must be nonnegative")
        if self.log_stride < 1 or self.window < 1:
            raise ContractError("log stride and window must be positive")


@dataclass
class LossCurve:
    window: int
    iterations: list = field(default_factory=list)
    raw: list = field(default_factory=list)
    moving: list = field(default_factory=list)

    def append(self, iteration, value):
        self.iterations.append(int(iteration))
        self.raw.append(float(value))
        recent = self.raw[-self.window:]
        self.moving.append(float(np.mean(recent)))

    def to_text(self, header=""):
        lines = [header, f"# moving-average window {self.window}\n", "# iteration moving_avg_nll\n"]
        lines += [f"{i} {m!r}\n" for i, m in zip(self.iterations, self.moving)]
        return "".join(lines)


def _draw_count(rng, bounds):
    lo, hi = bounds
    return int(rng.integers(lo, hi + 1))


def sample_context_idx(pool, n_c, rng, exclude=None, extreme_context=0):
    """Indices of ``n_c`` distinct rows, up to ``extreme_context`` of them from extreme rows."""
    available = np.ones(len(pool), dtype=bool)
    if exclude is not None:
        available[exclude] = False
    if available.sum() < n_c:
        raise ContractError(f"pool has {int(available.sum())} usable rows, need {n_c}")
    picks = []
    if extreme_context and pool.extreme is not None:
        ext = np.flatnonzero(available & pool.extreme)
        k = min(extreme_context, len(ext), n_c)
        if k:
            chosen = rng.choice(ext, size=k, replace=False)
            picks.append(chosen)
            available[chosen] = False
    rest = n_c - sum(len(p) for p in picks)
    picks.append(rng.choice(np.flatnonzero(available), size=rest, replace=False))
    return np.concatenate(picks)


def sample_episode(pool, cfg, rng):
    """Disjoint context and target sets drawn without replacement from ``pool``."""
    need = cfg.nc_range[1] + cfg.nt_range[1]
    if len(pool) < need:
        raise ContractError(f"pool of {len(pool)} rows is smaller than n_c + n_t = {need}")
    n_c = _draw_count(rng, cfg.nc_range)
    n_t = _draw_count(rng, cfg.nt_range)
    if cfg.extreme_context or cfg.extreme_target:
        c_idx = sample_context_idx(pool, n_c, rng, extreme_context=cfg.extreme_context)
        t_idx = sample_context_idx(pool, n_t, rng, exclude=c_idx, extreme_context=cfg.extreme_target)
    else:
        perm = rng.permutation(len(pool))
        c_idx, t_idx = perm[:n_c], perm[n_c:n_c + n_t]
    return Episode(
        ContextSet(pool.x[c_idx], pool.y[c_idx]),
        TargetBatch(pool.x[t_idx], pool.y[t_idx]),
        c_idx, t_idx,
    )


def episode_loss(bundle, episode):
    return gaussian_nll(predict(bundle, episode.context, episode.targets), episode.targets.outputs)


def train(kind, pool, cfg, model_config=None, bundle=None, on_step=None):
    """Fit a CNP or AdaCNP bundle by stochastic NLL minimisation.

    ``pool`` is a :class:`Pool`, or a callable ``rng -> Pool`` that yields a
    fresh task each iteration (meta-learning over a task family). Returns
    ``(bundle, loss_curve)``.
    """
    init_seq, episode_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    if bundle is None:
        d_x, d_y = _pool_dims(pool, np.random.default_rng(init_seq.spawn(1)[0]))
        mc = replace(model_config or ModelConfig(), tau=cfg.tau)
        bundle = init_bundle(d_x, d_y, mc, np.random.default_rng(init_seq), kind=kind)
    rng = np.random.default_rng(episode_seq)
    params = bundle.params()
    state = AdamState.for_params(params, lr=cfg.lr)
    curve = LossCurve(cfg.window)
    for it in range(1, cfg.iterations + 1):
        current = pool(rng) if callable(pool) else pool
        episode = sample_episode(current, cfg, rng)
        tape = Tape()
        loss = episode_loss(bundle.lift(tape), episode)
        value = float(loss.value)
        if not np.isfinite(value):
            raise NumericalError(
                f"non-finite loss at iteration {it} "
                f"(n_c={len(episode.context)}, n_t={len(episode.targets)}, "
                f"context rows {episode.context_idx.tolist()})"
            )
        grads = backward(tape, loss)
        if cfg.lr_final is not None:
            state = replace(state, lr=cfg.lr_at(it))
        params, state = optimizer_step(params, grads, state)
        bundle = bundle.with_params(params)
        if it % cfg.log_stride == 0:
            curve.append(it, value)
        if on_step is not None:
            on_step(it, value, episode)
    if cfg.checkpoint_path:
        save_bundle(bundle, cfg.checkpoint_path)
    return bundle, curve


def _pool_dims(pool, rng):
    sample = pool(rng) if callable(pool) else pool
    return sample.x.shape[1], sample.y.shape[1]


class GpBaseline:
    """Predictor that refits GP hyperparameters to every context set."""

    def __init__(self, config: GpConfig | None = None):
        self.config = config

    def __call__(self, ctx, targets):
        cfg = self.config or fit_gp(ctx)
        return gp_predict(cfg, ctx, targets)


class BundlePredictor:
    def __init__(self, bundle):
        self.bundle = bundle

    def __call__(self, ctx, targets):
        return predict(self.bundle, ctx, targets)


def as_predictor(model):
    if isinstance(model, ModelBundle):
        return BundlePredictor(model)
    if isinstance(model, GpConfig):
        return GpBaseline(model)
    if callable(model):
        return model
    raise ContractError(f"cannot predict with {type(model).__name__}")


def check_no_leakage(context_pool, eval_pool):
    seen = {row.tobytes() for row in context_pool.x}
    leaked = [i for i, row in enumerate(eval_pool.x) if row.tobytes() in seen]
    if leaked:
        raise ContractError(
            f"{len(leaked)} evaluation inputs also appear in the context pool "
            f"(first at evaluation row {leaked[0]})"
        )


@dataclass(frozen=True)
class Evaluation:
    report: MetricsReport
    means: np.ndarray
    vars: np.ndarray
    truths: np.ndarray
    context_idx: list


def _predict_rows(args):
    predictor, context_pool, eval_x, rows, seeds, n_c, extreme_context = args
    out = []
    for j, ss in zip(rows, seeds):
        rng = np.random.default_rng(ss)
        idx = sample_context_idx(context_pool, n_c, rng, extreme_context=extreme_context)
        pred = predictor(ContextSet(context_pool.x[idx], context_pool.y[idx]),
                         TargetBatch(eval_x[j:j + 1]))
        out.append((np.asarray(pred.mean)[0], np.asarray(pred.var)[0], idx))
    return out


def evaluate(model, context_pool, eval_set, n_c=16, resamples=10, seed=0,
             per_target=True, extreme_context=0, levels=DECILES, workers=1):
    """Predict every evaluation row from contexts drawn only from ``context_pool``.

    With ``per_target`` each evaluation row gets its own context draw from
    its own random stream, so results do not depend on ``workers``; otherwise
    one draw is shared by all rows of a resample. Metrics are computed per
    resample and summarised as mean and standard deviation.
    """
    if len(eval_set) == 0:
        raise ContractError("evaluation set is empty")
    check_no_leakage(context_pool, eval_set)
    predictor = as_predictor(model)
    n, d_y = eval_set.y.shape
    means = np.empty((resamples, n, d_y))
    variances = np.empty((resamples, n, d_y))
    used = []
    runs = []
    pool = None
    if workers > 1 and per_target:
        from concurrent.futures import ProcessPoolExecutor

        pool = ProcessPoolExecutor(workers)
    try:
        for r in range(resamples):
            stream = np.random.SeedSequence([seed, r])
            if per_target:
                seeds = stream.spawn(n)
                chunks = [list(range(k, n, workers)) for k in range(workers)] if pool else [list(range(n))]
                jobs = [(predictor, context_pool, eval_set.x, rows, [seeds[j] for j in rows],
                         n_c, extreme_context) for rows in chunks if rows]
                results = pool.map(_predict_rows, jobs) if pool else map(_predict_rows, jobs)
                draws = [None] * n
                for job, res in zip(jobs, results):
                    for j, (mu, var, idx) in zip(job[3], res):
                        means[r, j], variances[r, j], draws[j] = mu, var, idx
            else:
                rng = np.random.default_rng(stream)
                idx = sample_context_idx(context_pool, n_c, rng, extreme_context=extreme_context)
                pred = predictor(ContextSet(context_pool.x[idx], context_pool.y[idx]),
                                 TargetBatch(eval_set.x))
                means[r] = np.asarray(pred.mean)
                variances[r] = np.asarray(pred.var)
                draws = [idx]
            used.append(draws)
            runs.append(evaluate_from_arrays(means[r], variances[r], eval_set.y, levels))
    finally:
        if pool is not None:
            pool.shutdown()
    report = MetricsReport.from_runs(runs, n_points=n)
    return Evaluation(report, means, variances, eval_set.y.copy(), used)


def evaluate_from_arrays(means, variances, truths, levels=DECILES):
    return evaluate_prediction(GaussianPrediction(means, variances), truths, levels)
