"""Extreme load days end to end: detect, split, train, evaluate, plot.

Uses the synthetic hourly series that ships with the package: three years of
load driven by temperature, weekly and daily shape and holidays, with a few
dozen days of injected extra demand. Days are flagged extreme by comparing
their DTW distance to the surrounding two weeks, then each model predicts the
24 hourly loads of held-out extreme days from 16 historical days of context.

    python3 demos/load_pipeline.py --seed 0 --out load_out
"""

import argparse
from pathlib import Path

import numpy as np

from adacnp.benchmarks import LoadBenchmark, load_fixture_data
from adacnp.loaddata import STRATA, split_and_standardize
from adacnp.plotting import plot_forecast, plot_loss_curves
from adacnp.training import GpBaseline, TrainConfig, evaluate, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=LoadBenchmark.iterations)
    ap.add_argument("--out", default="load_out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench = LoadBenchmark(iterations=args.iterations)

    data = load_fixture_data(bench)
    lab = data.labeling
    flagged = {d for d, e in zip(data.records.dates, lab.extreme) if e}
    hits = len(flagged & set(data.injected))
    print(f"{len(data.records)} day records, {lab.n_extreme} flagged extreme "
          f"({hits} of {len(data.injected)} injected days recovered)")

    split = split_and_standardize(data.records, lab.extreme, bench.test_fraction, args.seed)
    print("split:", ", ".join(f"{s} {len(split.members[s])}" for s in STRATA))
    hist, test = split.historical(), split.pool("test_extreme")

    models, curves = {}, {}
    for kind in ("cnp", "adacnp"):
        cfg = TrainConfig(iterations=bench.iterations, nc_range=bench.nc_range,
                          nt_range=bench.nt_range, lr=bench.lr, lr_final=bench.lr_final,
                          seed=args.seed,
                          extreme_context=bench.extreme_context)
        models[kind], curves[kind] = train(kind, hist, cfg, bench.model)
    models["gp"] = GpBaseline()
    plot_loss_curves(curves, out / "loss.svg")

    print(f"{'model':>7} {'MSE%':>14} {'NLL':>14} {'pinball':>16}")
    results = {}
    for kind, model in models.items():
        res = evaluate(model, hist, test, n_c=bench.n_c, resamples=bench.resamples,
                       seed=args.seed, extreme_context=bench.extreme_context)
        results[kind] = res
        r = res.report
        print(f"{kind:>7} {r.mse_percent:7.2f} +/- {r.mse_percent_spread:4.2f} {r.nll:7.3f} +/- {r.nll_spread:4.2f}"
              f" {r.pinball:8.4f} +/- {r.pinball_spread:5.3f}")

    # first held-out extreme day, back in MW
    day = split.indices("test_extreme")[0]
    ys = split.y_std
    truth = data.records.y[day]
    preds = {}
    for kind, res in results.items():
        mean, var = res.means[0][0], res.vars[0][0]
        preds[kind] = (ys.invert(mean), np.sqrt(var) * ys.scale)
    when = data.records.dates[day].isoformat()
    plot_forecast(np.arange(24), truth, preds, out / "extreme_day.svg",
                  title=f"extreme day {when}", xlabel="hour")
    print(f"figures in {out}/")


if __name__ == "__main__":
    main()
