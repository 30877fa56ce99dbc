"""Phase-transition regression: CNP against AdaCNP and an exact GP.

Each task is a line for x <= x_c and a noisier sinusoid above it. Both neural
processes train on freshly drawn tasks every iteration and are then scored on
held-out tasks, given the first 16 points of each as context.

    python3 demos/toy_benchmark.py --seeds 3 --out toy_out
"""

import argparse
from pathlib import Path

import numpy as np

from adacnp.benchmarks import ToyBenchmark, toy_scale, toy_test_set, toy_train_pool, toy_evaluate
from adacnp.models import TargetBatch, predict
from adacnp.plotting import plot_forecast, plot_loss_curves
from adacnp.training import GpBaseline, TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--iterations", type=int, default=ToyBenchmark.iterations)
    ap.add_argument("--out", default="toy_out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    bench = ToyBenchmark(iterations=args.iterations)
    scale = toy_scale(bench)
    print(f"y standardised with mean {scale[0]:.3f}, sd {scale[1]:.3f}")
    print(f"{'seed':>4} {'model':>7} {'MSE%':>8} {'NLL':>8} {'pinball':>8} {'MSE% x>x_c':>11}")
    for seed in range(args.seeds):
        test_set = toy_test_set(bench, scale, seed)
        bundles, curves = {}, {}
        for kind in ("cnp", "adacnp"):
            cfg = TrainConfig(iterations=bench.iterations, nc_range=bench.nc_range,
                              nt_range=bench.nt_range, lr=bench.lr, lr_final=bench.lr_final,
                              seed=seed)
            bundles[kind], curves[kind] = train(kind, toy_train_pool(bench, scale), cfg, bench.model)
        predictors = {k: (lambda c, t, b=b: predict(b, c, t)) for k, b in bundles.items()}
        predictors["gp"] = GpBaseline()
        for kind, fn in predictors.items():
            mse, nll, pin, _, mse_ext = toy_evaluate(fn, test_set)
            print(f"{seed:>4} {kind:>7} {mse:8.3f} {nll:8.3f} {pin:8.4f} {mse_ext:11.3f}")

        plot_loss_curves(curves, out / f"loss_seed{seed}.svg")
        # one held-out task on a dense grid
        ctx, tgt, _ = test_set[0]
        grid = np.linspace(*bench.tasks.x_range, 200)[:, None]
        preds = {}
        for kind, fn in predictors.items():
            p = fn(ctx, TargetBatch(grid))
            preds[kind] = (p.mean[:, 0], np.sqrt(p.var[:, 0]))
        plot_forecast(grid[:, 0], None, preds, out / f"task_seed{seed}.svg",
                      title="held-out task", xlabel="x",
                      context=(ctx.inputs[:, 0], ctx.outputs[:, 0]))
    print(f"figures in {out}/")


if __name__ == "__main__":
    main()
