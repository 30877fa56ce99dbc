"""Vector-graphics figures: loss curves and forecasts with a one-sigma band.

Figures are written as standalone SVG with fixed metadata and id salt, so the
same inputs give byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {"svg.hashsalt": "adacnp", "svg.fonttype": "none", "font.size": 9}
COLORS = {"adacnp": "tab:red", "cnp": "tab:green", "gp": "tab:purple", "truth": "tab:blue"}


def _save(fig, path, description=""):
    fig.tight_layout()
    meta = {"Date": None, "Creator": "adacnp"}
    if description:
        meta["Description"] = description
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)


def plot_loss_curves(curves, path, title="Training NLL (moving average)", description=""):
    """``curves`` maps a label to a :class:`~adacnp.training.LossCurve`."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for label, curve in curves.items():
            ax.plot(curve.iterations, curve.moving, label=label, color=COLORS.get(label), lw=1.2)
        ax.set_xlabel("iteration")
        ax.set_ylabel("NLL")
        ax.set_title(title)
        ax.legend(frameon=False)
        _save(fig, path, description)


def plot_forecast(x, truth, predictions, path, title="", xlabel="hour", context=None,
                  description=""):
    """Truth curve plus mean and mean +/- std band for each model.

    ``predictions`` maps a label to ``(mean, std)`` arrays aligned with ``x``;
    ``context`` optionally gives ``(x, y)`` points to mark.
    """
    x = np.asarray(x)
    order = np.argsort(x)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        if truth is not None:
            ax.plot(x[order], np.asarray(truth)[order], color=COLORS["truth"], lw=1.5, label="truth")
        for label, (mean, std) in predictions.items():
            mean, std = np.asarray(mean)[order], np.asarray(std)[order]
            color = COLORS.get(label)
            line, = ax.plot(x[order], mean, lw=1.2, label=label, color=color)
            ax.fill_between(x[order], mean - std, mean + std, alpha=0.2, color=line.get_color(), lw=0)
        if context is not None:
            ax.plot(*context, "k*", ms=6, label="context")
        ax.set_xlabel(xlabel)
        ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        _save(fig, path, description)
