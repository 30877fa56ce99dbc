"""Command-line entry point: ``adacnp <subcommand> [options]``.

Every option can also come from a ``key = value`` file given with
``--config``; command-line flags override the file, which overrides the
defaults. Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from adacnp import __version__
from adacnp.benchmarks import SMALL_MODEL, TOY_TASKS, ToyBenchmark, toy_evaluate, toy_scale
from adacnp.benchmarks import toy_test_set, toy_train_pool
from adacnp.detect import detect_extremes
from adacnp.errors import AdaCNPError, ContractError, DataError, NumericalError
from adacnp.loaddata import (
    build_day_records, bundled_fixture, ingest, read_holidays, split_and_standardize,
)
from adacnp.metrics import MetricsReport
from adacnp.models import ContextSet, ModelConfig, TargetBatch, load_bundle, save_bundle
from adacnp.models.bundle import init_bundle
from adacnp.synth import PhaseTransitionTask, TaskConfig, sample_points, sample_task, write_sample
from adacnp.training import (
    GpBaseline, TrainConfig, as_predictor, evaluate, sample_context_idx, train,
)

log = logging.getLogger("adacnp")


class UsageError(AdaCNPError):
    pass


# --- option tables -------------------------------------------------------------

COMMON = {
    "seed": (0, "random seed"),
    "out": ("out", "output directory"),
    "workers": (1, "evaluation worker processes"),
}
TOY = {f.name: (getattr(TOY_TASKS, f.name), f"toy task {f.name.replace('_', ' ')}")
       for f in fields(TaskConfig)}
MODEL = {f.name: (getattr(SMALL_MODEL, f.name), f"network {f.name.replace('_', ' ')}")
         for f in fields(ModelConfig) if f.name != "tau"}
LOAD = {
    "input": ("", "hourly CSV (empty: bundled synthetic fixture)"),
    "holidays": ("", "holiday date file (empty: bundled list when input is bundled)"),
    "labels": ("", "labels file written by detect (empty: run detection inline)"),
    "half_window": (7, "detector half window in days"),
    "k": (3.0, "detector threshold in standard deviations"),
    "include_self": (True, "count a day's own score in its window statistics"),
    "test_fraction": (0.2, "held-out fraction of each stratum"),
    "split_seed": (0, "seed of the normal/extreme train-test split"),
}
KINDS = ("adacnp", "cnp", "gp")

OPTIONS = {
    "gen-toy": {
        **COMMON, **TOY,
        "n_tasks": (1, "number of tasks"),
        "n_points": (100, "points per task"),
    },
    "detect": {
        **COMMON, **{k: LOAD[k] for k in ("input", "holidays", "half_window", "k", "include_self")},
        "cost": ("abs", "DTW local cost: abs or sq"),
        "band": (-1, "DTW band half width (negative: unrestricted)"),
        "normalize": (False, "divide each day by its mean load before DTW"),
    },
    "train": {
        **COMMON, **TOY, **MODEL, **LOAD,
        "data": ("toy", "toy or load"),
        "model": ("adacnp", "adacnp or cnp"),
        "iterations": (2000, "training iterations"),
        "lr": (1e-3, "Adam learning rate"),
        "lr_final": (-1.0, "cosine-decay the rate to this value (negative: constant)"),
        "tau": (1.0, "softmax temperature"),
        "nc_range": ((5, 20), "context count range lo,hi"),
        "nt_range": ((10, 20), "target count range lo,hi"),
        "log_stride": (1, "log every n-th iteration"),
        "window": (100, "moving-average window"),
        "extreme_context": (0, "extreme days per context set (load)"),
        "extreme_target": (0, "extreme days per target set (load)"),
        "points_per_task": (40, "points drawn per toy task"),
        "init_only": (False, "write the initial checkpoint and stop"),
    },
    "eval": {
        **COMMON, **TOY, **LOAD,
        "data": ("toy", "toy or load"),
        "model": ("adacnp", "adacnp, cnp or gp"),
        "checkpoint": ("", "checkpoint written by train (not used for gp)"),
        "n_c": (16, "contexts per prediction"),
        "resamples": (10, "context resamples (load)"),
        "extreme_context": (0, "extreme days per context set (load)"),
        "eval_split": ("test_extreme", "strata to evaluate, comma separated (load)"),
        "context_split": ("historical_normal,historical_extreme", "strata contexts come from (load)"),
        "test_tasks": (50, "held-out toy tasks"),
        "test_points": (50, "targets per toy task"),
    },
    "forecast": {
        **COMMON, **TOY, **LOAD,
        "data": ("toy", "toy or load"),
        "model": ("adacnp", "adacnp, cnp or gp"),
        "checkpoint": ("", "checkpoint written by train (not used for gp)"),
        "n_c": (16, "contexts per prediction"),
        "extreme_context": (0, "extreme days per context set (load)"),
        "date": ("", "day to forecast, ISO date (load; empty: first test extreme day)"),
        "task": ("", "task file from gen-toy (toy; empty: draw one from the seed)"),
        "grid": (200, "grid points for the toy curve"),
    },
}


def _parse_value(text, default, key):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
            kind = float if any(isinstance(d, float) for d in default) else int
            return tuple(kind(p) for p in parts)
        return text
    except ValueError:
        raise UsageError(f"bad value {text!r} for {key}") from None


def read_config_file(path, options):
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        if key not in options:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(value, options[key][0], key)
    return values


def resolve(command, file_values, flag_values):
    options = OPTIONS[command]
    cfg = {k: v for k, (v, _) in options.items()}
    cfg.update(file_values)
    cfg.update({k: v for k, v in flag_values.items() if v is not None})
    return cfg


# where results land and how many processes compute them never change the bytes
NOT_IN_HEADER = ("out", "workers")


def header_lines(command, cfg):
    lines = [f"adacnp {__version__} {command}"]
    lines += [f"{k} = {_fmt(v)}" for k, v in sorted(cfg.items()) if k not in NOT_IN_HEADER]
    return lines


def header_text(command, cfg, columns=None):
    text = "".join(f"# {line}\n" for line in header_lines(command, cfg))
    return text + (f"# {columns}\n" if columns else "")


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


# --- shared builders -------------------------------------------------------------

def _task_config(cfg):
    try:
        return TaskConfig(**{f.name: cfg[f.name] for f in fields(TaskConfig)})
    except (ContractError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _model_config(cfg):
    try:
        return ModelConfig(**{k: cfg[k] for k in MODEL}, tau=cfg.get("tau", 1.0))
    except (ContractError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _toy_bench(cfg):
    return ToyBenchmark(
        tasks=_task_config(cfg),
        points_per_task=cfg.get("points_per_task", 40),
        test_tasks=cfg.get("test_tasks", 50),
        test_points=cfg.get("test_points", 50),
        n_c=cfg.get("n_c", 16),
    )


def _series(cfg):
    if cfg["input"]:
        holidays = read_holidays(cfg["holidays"]) if cfg["holidays"] else frozenset()
        return ingest(cfg["input"], holidays=holidays)
    paths = bundled_fixture()
    holidays = read_holidays(cfg["holidays"] or paths["holidays"])
    return ingest(paths["hourly"], holidays=holidays)


def read_labels(path, dates):
    flags = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#") or not line.strip():
                continue
            parts = line.split()
            try:
                flags[dt.date.fromisoformat(parts[0])] = parts[1] == "extreme"
            except (ValueError, IndexError):
                raise DataError(f"{path}: line {lineno}: expected 'date label ...'") from None
    missing = [d for d in dates if d not in flags]
    if missing:
        raise DataError(f"{path}: no label for {len(missing)} days (first {missing[0]})")
    return np.array([flags[d] for d in dates])


def _load_split(cfg):
    records = build_day_records(_series(cfg))
    if cfg["labels"]:
        extreme = read_labels(cfg["labels"], records.dates)
    else:
        extreme = detect_extremes(records.curves, cfg["half_window"], cfg["k"],
                                  include_self=cfg["include_self"]).extreme
    return split_and_standardize(records, extreme, cfg["test_fraction"], cfg["split_seed"])


def _strata(text):
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in names if s not in ("historical_normal", "historical_extreme",
                                          "test_normal", "test_extreme")]
    if bad or not names:
        raise UsageError(f"unknown split names {bad or text!r}")
    return names


def _predictor(cfg):
    if cfg["model"] not in KINDS:
        raise UsageError(f"model must be one of {KINDS}")
    if cfg["model"] == "gp":
        return GpBaseline()
    if not cfg["checkpoint"]:
        raise UsageError(f"--checkpoint is required for model {cfg['model']}")
    bundle = load_bundle(cfg["checkpoint"])
    if bundle.kind != cfg["model"]:
        raise UsageError(f"checkpoint holds a {bundle.kind} model, not {cfg['model']}")
    return as_predictor(bundle)


def _write(path, text):
    Path(path).write_text(text)
    log.info("wrote %s", path)


# --- subcommands -----------------------------------------------------------------

def cmd_gen_toy(cfg, out):
    """Sample toy tasks and write task and point files."""
    if cfg["n_points"] < 1 or cfg["n_tasks"] < 1:
        raise UsageError("n_points and n_tasks must be at least 1")
    tasks = _task_config(cfg)
    rng = np.random.default_rng(cfg["seed"])
    head = header_text("gen-toy", cfg)
    for k in range(cfg["n_tasks"]):
        task = sample_task(rng, tasks)
        sample = sample_points(task, cfg["n_points"], rng)
        _write(out / f"task_{k:03d}.txt", head + task.to_text())
        write_sample(sample, out / f"sample_{k:03d}.txt", header=head)


def cmd_detect(cfg, out):
    """Label extreme days in an hourly series."""
    if cfg["cost"] not in ("abs", "sq"):
        raise UsageError("cost must be abs or sq")
    records = build_day_records(_series(cfg))
    lab = detect_extremes(records.curves, cfg["half_window"], cfg["k"], cfg["cost"],
                          None if cfg["band"] < 0 else cfg["band"], cfg["normalize"],
                          cfg["include_self"])
    lines = [header_text("detect", cfg, "date label score window_mean window_std")]
    for d, e, s, m, sd in zip(records.dates, lab.extreme.tolist(), lab.score.tolist(),
                               lab.window_mean.tolist(), lab.window_std.tolist()):
        lines.append(f"{d.isoformat()} {'extreme' if e else 'normal'} {s!r} {m!r} {sd!r}\n")
    _write(out / "labels.txt", "".join(lines))
    print(f"{lab.n_extreme} extreme days out of {len(records)}")


def _train_config(cfg):
    try:
        return TrainConfig(
            iterations=cfg["iterations"], nc_range=cfg["nc_range"], nt_range=cfg["nt_range"],
            lr=cfg["lr"], lr_final=None if cfg["lr_final"] < 0 else cfg["lr_final"],
            tau=cfg["tau"], seed=cfg["seed"], log_stride=cfg["log_stride"],
            window=cfg["window"], extreme_context=cfg["extreme_context"],
            extreme_target=cfg["extreme_target"],
        )
    except (ContractError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def cmd_train(cfg, out):
    """Train a model; write checkpoint, loss curve and plot."""
    from adacnp.plotting import plot_loss_curves

    if cfg["model"] not in ("adacnp", "cnp"):
        raise UsageError("train supports models adacnp and cnp")
    tcfg = _train_config(cfg)
    mcfg = _model_config(cfg)
    head = header_lines("train", cfg)
    if cfg["data"] == "toy":
        bench = _toy_bench(cfg)
        pool = toy_train_pool(bench, toy_scale(bench))
        d_x, d_y = 1, 1
    elif cfg["data"] == "load":
        split = _load_split(cfg)
        pool = split.historical()
        d_x, d_y = pool.x.shape[1], pool.y.shape[1]
        split.write_header(out / "dataset.json", {"config": dict(zip(cfg, map(_fmt, cfg.values())))})
    else:
        raise UsageError("data must be toy or load")
    if cfg["init_only"]:
        init_seq, _ = np.random.SeedSequence(tcfg.seed).spawn(2)
        bundle = init_bundle(d_x, d_y, mcfg, np.random.default_rng(init_seq), kind=cfg["model"])
        save_bundle(bundle, out / "checkpoint.bin", "\n".join(head))
        return
    bundle, curve = train(cfg["model"], pool, tcfg, mcfg)
    save_bundle(bundle, out / "checkpoint.bin", "\n".join(head))
    _write(out / "loss_curve.txt", curve.to_text(header_text("train", cfg)))
    plot_loss_curves({cfg["model"]: curve}, out / "loss_curve.svg",
                     description="\n".join(head))
    print(f"final moving-average NLL {curve.moving[-1]:.4f}")


def cmd_eval(cfg, out):
    """Score a model; write report, predictions and plot."""
    from adacnp.plotting import plot_forecast

    predictor = _predictor(cfg)
    head = header_text("eval", cfg)
    if cfg["data"] == "toy":
        bench = _toy_bench(cfg)
        test = toy_test_set(bench, toy_scale(bench), cfg["seed"])
        mse, nll, pin, mse_n, mse_e = toy_evaluate(predictor, test)
        report = MetricsReport.from_runs([(mse, nll, pin)], n_points=len(test) * bench.test_points)
        rows = [head, "# task x truth mean var\n"]
        for k, (ctx, tgt, _) in enumerate(test):
            pred = predictor(ctx, tgt)
            for x, y, m, v in zip(tgt.inputs[:, 0].tolist(), tgt.outputs[:, 0].tolist(),
                                  pred.mean[:, 0].tolist(), pred.var[:, 0].tolist()):
                rows.append(f"{k} {x!r} {y!r} {m!r} {v!r}\n")
        _write(out / "predictions.txt", "".join(rows))
        ctx, tgt, _ = test[0]
        pred = predictor(ctx, tgt)
        plot_forecast(tgt.inputs[:, 0], tgt.outputs[:, 0],
                      {cfg["model"]: (pred.mean[:, 0], np.sqrt(pred.var[:, 0]))},
                      out / "forecast.svg", "held-out task 0", "x",
                      (ctx.inputs[:, 0], ctx.outputs[:, 0]), description=head)
        extra = f"mse_percent_normal: {mse_n!r}\nmse_percent_extreme: {mse_e!r}\n"
    elif cfg["data"] == "load":
        split = _load_split(cfg)
        eval_strata, ctx_strata = _strata(cfg["eval_split"]), _strata(cfg["context_split"])
        ev, ctx_pool = split.pool(*eval_strata), split.pool(*ctx_strata)
        res = evaluate(predictor, ctx_pool, ev, n_c=cfg["n_c"], resamples=cfg["resamples"],
                       seed=cfg["seed"], extreme_context=cfg["extreme_context"],
                       workers=cfg["workers"])
        report = res.report
        dates = [split.records.dates[i] for i in split.indices(*eval_strata)]
        cols = " ".join(f"mean_r{r} var_r{r}" for r in range(cfg["resamples"]))
        rows = [head, "# values in standardized units\n", f"# date hour truth {cols}\n"]
        for j, date in enumerate(dates):
            for h in range(ev.y.shape[1]):
                vals = " ".join(f"{float(res.means[r, j, h])!r} {float(res.vars[r, j, h])!r}"
                                for r in range(cfg["resamples"]))
                rows.append(f"{date.isoformat()} {h} {float(res.truths[j, h])!r} {vals}\n")
        _write(out / "predictions.txt", "".join(rows))
        scale = split.y_std.scale
        mean = split.y_std.invert(res.means[0, 0])
        plot_forecast(np.arange(24), split.y_std.invert(res.truths[0]),
                      {cfg["model"]: (mean, np.sqrt(res.vars[0, 0]) * scale)},
                      out / "forecast.svg", f"{dates[0].isoformat()} (MW)", "hour",
                      description=head)
        extra = ""
    else:
        raise UsageError("data must be toy or load")
    _write(out / "report.txt", head + report.to_text() + extra)
    print(report.to_text(), end="")


def cmd_forecast(cfg, out):
    """Forecast one toy task or one load day with a band plot."""
    from adacnp.plotting import plot_forecast

    predictor = _predictor(cfg)
    head = header_text("forecast", cfg)
    rng = np.random.default_rng(cfg["seed"])
    if cfg["data"] == "toy":
        bench = _toy_bench(cfg)
        mu, sd = toy_scale(bench)
        if cfg["task"]:
            task = PhaseTransitionTask.from_text(Path(cfg["task"]).read_text())
        else:
            task = sample_task(rng, bench.tasks)
        s = sample_points(task, cfg["n_c"], rng)
        grid = np.linspace(task.x_lo, task.x_hi, cfg["grid"])
        ctx = ContextSet(s.x[:, None], ((s.y - mu) / sd)[:, None])
        pred = predictor(ctx, TargetBatch(grid[:, None]))
        mean = pred.mean[:, 0] * sd + mu
        std = np.sqrt(pred.var[:, 0]) * sd
        truth = task.mean(grid)
        rows = [head, "# x true_mean mean std\n"]
        rows += [f"{x!r} {t!r} {m!r} {v!r}\n" for x, t, m, v in
                 zip(grid.tolist(), truth.tolist(), mean.tolist(), std.tolist())]
        _write(out / "forecast.txt", "".join(rows))
        plot_forecast(grid, truth, {cfg["model"]: (mean, std)}, out / "forecast.svg",
                      f"{cfg['n_c']} contexts", "x", (s.x, s.y), description=head)
    elif cfg["data"] == "load":
        split = _load_split(cfg)
        hist = split.historical()
        dates = split.records.dates
        if cfg["date"]:
            try:
                j = dates.index(dt.date.fromisoformat(cfg["date"]))
            except ValueError:
                raise DataError(f"no complete record for {cfg['date']!r}") from None
            if j in set(split.indices("historical_normal", "historical_extreme").tolist()):
                raise ContractError(f"{cfg['date']} is a historical day; pick a test day")
        else:
            j = int(split.members["test_extreme"][0])
        idx = sample_context_idx(hist, cfg["n_c"], rng, extreme_context=cfg["extreme_context"])
        pred = predictor(ContextSet(hist.x[idx], hist.y[idx]), TargetBatch(split.x[j:j + 1]))
        mean = split.y_std.invert(pred.mean[0])
        std = np.sqrt(pred.var[0]) * split.y_std.scale
        truth = split.records.y[j]
        rows = [head, "# hour truth_mw mean_mw std_mw\n"]
        rows += [f"{h} {t!r} {m!r} {v!r}\n" for h, (t, m, v) in
                 enumerate(zip(truth.tolist(), mean.tolist(), std.tolist()))]
        _write(out / "forecast.txt", "".join(rows))
        plot_forecast(np.arange(24), truth, {cfg["model"]: (mean, std)}, out / "forecast.svg",
                      f"{dates[j].isoformat()} (MW)", "hour", description=head)
    else:
        raise UsageError("data must be toy or load")


COMMANDS = {"gen-toy": cmd_gen_toy, "detect": cmd_detect, "train": cmd_train,
            "eval": cmd_eval, "forecast": cmd_forecast}


def build_parser():
    parser = argparse.ArgumentParser(prog="adacnp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in OPTIONS.items():
        p = sub.add_parser(name, help=COMMANDS[name].__doc__ or name.replace("-", " "))
        p.add_argument("--config", help="key = value file")
        p.add_argument("-v", "--verbose", action="store_true")
        for key, (default, text) in options.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           metavar=type(default).__name__.upper(),
                           help=f"{text} (default: {_fmt(default) or 'empty'})")
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    options = OPTIONS[args.command]
    file_values = read_config_file(args.config, options) if args.config else {}
    flags = {k: _parse_value(getattr(args, k), options[k][0], k)
             for k in options if getattr(args, k) is not None}
    cfg = resolve(args.command, file_values, flags)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if cfg["workers"] < 1:
        raise UsageError("workers must be at least 1")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    COMMANDS[args.command](cfg, out)
    return 0


def main(argv=None):
    try:
        return run(argv)
    except UsageError as exc:
        print(f"adacnp: usage error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"adacnp: numerical failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, ContractError, OSError) as exc:
        print(f"adacnp: data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
