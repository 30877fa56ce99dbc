"""CNP and AdaCNP predictors.

Both share one encoder/decoder pipeline and differ only in how the context
representations are pooled for each target:

* CNP averages them uniformly.
* AdaCNP embeds context and target inputs with a shared network, scores
  every (context, target) pair with a small MLP on the concatenated
  embeddings, turns the scores into per-target softmax weights at
  temperature ``tau``, and pools with those weights.

All functions work on plain arrays and, when the bundle has been lifted onto
a tape, on :class:`~adacnp.core.autodiff.Var` nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from adacnp.core import autodiff as ad
from adacnp.core.mlp import mlp_forward
from adacnp.errors import ContractError, DimensionError

VAR_FLOOR = 1e-4
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _rows(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a vector or a 2-D array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ContextSet:
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        x = _rows(self.inputs, "context inputs")
        y = _rows(self.outputs, "context outputs")
        if x.shape[0] < 1:
            raise ContractError("context set is empty")
        if x.shape[0] != y.shape[0]:
            raise DimensionError(f"{x.shape[0]} context inputs but {y.shape[0]} outputs")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class TargetBatch:
    inputs: np.ndarray
    outputs: np.ndarray | None = None

    def __post_init__(self):
        x = _rows(self.inputs, "target inputs")
        if x.shape[0] < 1:
            raise ContractError("target batch is empty")
        object.__setattr__(self, "inputs", x)
        if self.outputs is not None:
            y = _rows(self.outputs, "target outputs")
            if y.shape[0] != x.shape[0]:
                raise DimensionError(f"{x.shape[0]} target inputs but {y.shape[0]} outputs")
            object.__setattr__(self, "outputs", y)

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class GaussianPrediction:
    """Diagonal Gaussian per target: ``mean`` and ``var`` of shape (n_t, d_y)."""

    mean: object
    var: object

    def detach(self):
        return GaussianPrediction(np.array(ad.value_of(self.mean)), np.array(ad.value_of(self.var)))

    @property
    def std(self):
        return np.sqrt(ad.value_of(self.var))


def _check_pair(bundle, ctx, targets=None):
    if ctx.inputs.shape[1] != bundle.d_x or ctx.outputs.shape[1] != bundle.d_y:
        raise DimensionError(
            f"context has d_x={ctx.inputs.shape[1]}, d_y={ctx.outputs.shape[1]}; "
            f"bundle expects d_x={bundle.d_x}, d_y={bundle.d_y}"
        )
    if targets is not None and targets.inputs.shape[1] != bundle.d_x:
        raise DimensionError(
            f"targets have d_x={targets.inputs.shape[1]}, bundle expects {bundle.d_x}"
        )


def encode_context(bundle, ctx):
    """Representation ``r_i = h([x_i, y_i])`` for every context pair, shape (n_c, d_r)."""
    _check_pair(bundle, ctx)
    return mlp_forward(bundle.encoder, np.concatenate([ctx.inputs, ctx.outputs], axis=1))


def uniform_aggregate(reps):
    if ad.value_of(reps).shape[0] < 1:
        raise ContractError("cannot aggregate an empty representation list")
    return ad.mean(reps, axis=0)


def embed(bundle, xs):
    xs = _rows(xs, "inputs") if not isinstance(xs, ad.Var) else xs
    return mlp_forward(bundle.embedding, xs)


def score(bundle, e_ctx, e_tgt):
    """Relevance of one context embedding to one target embedding (context first)."""
    e_ctx = np.asarray(e_ctx, dtype=np.float64)
    e_tgt = np.asarray(e_tgt, dtype=np.float64)
    if e_ctx.shape != (bundle.d_e,) or e_tgt.shape != (bundle.d_e,):
        raise DimensionError(
            f"embeddings must have shape ({bundle.d_e},), got {e_ctx.shape} and {e_tgt.shape}"
        )
    return float(mlp_forward(bundle.scorer, np.concatenate([e_ctx, e_tgt]))[0])


def pair_scores(bundle, e_ctx, e_tgt):
    """Score matrix of shape (n_t, n_c); row j holds every context's score for target j."""
    n_c = ad.value_of(e_ctx).shape[0]
    n_t = ad.value_of(e_tgt).shape[0]
    ctx_idx = np.tile(np.arange(n_c), n_t)
    tgt_idx = np.repeat(np.arange(n_t), n_c)
    pairs = ad.concat([ad.take(e_ctx, ctx_idx), ad.take(e_tgt, tgt_idx)], axis=1)
    return ad.reshape(mlp_forward(bundle.scorer, pairs), (n_t, n_c))


def softmax_weights(scores, tau):
    """Temperature softmax over the last (context) axis."""
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    sv = ad.value_of(scores)
    if not np.all(np.isfinite(sv)):
        raise ContractError("scores must be finite")
    if isinstance(scores, ad.Var):
        return ad.softmax(ad.div(scores, float(tau)), axis=-1)
    return ad.softmax(np.asarray(scores, dtype=np.float64) / tau, axis=-1)


def weighted_aggregate(weights, reps):
    """``sum_i w_i r_i``; ``weights`` is one row (n_c,) or a matrix (n_t, n_c)."""
    wv, rv = ad.value_of(weights), ad.value_of(reps)
    if wv.shape[-1] != rv.shape[0]:
        raise ContractError(f"{wv.shape[-1]} weights for {rv.shape[0]} representations")
    if wv.ndim == 1:
        return ad.reshape(ad.matmul(ad.reshape(weights, (1, -1)), reps), (rv.shape[1],))
    return ad.matmul(weights, reps)


def variance_transform(raw):
    return ad.add(ad.softplus(raw), VAR_FLOOR)


def decode(bundle, x_t, r):
    """Mean and variance for targets ``x_t`` given pooled representation(s) ``r``.

    ``x_t`` is a vector or an (n_t, d_x) array; ``r`` is either one shared
    vector or one row per target.
    """
    xv = np.asarray(x_t, dtype=np.float64)
    single = xv.ndim == 1
    xv = xv.reshape(1, -1) if single else xv
    if xv.shape[1] != bundle.d_x:
        raise DimensionError(f"target input size {xv.shape[1]}, bundle expects {bundle.d_x}")
    rv = ad.value_of(r)
    if rv.shape[-1] != bundle.d_r:
        raise DimensionError(f"representation size {rv.shape[-1]}, bundle expects {bundle.d_r}")
    if rv.ndim == 1:
        r = ad.take(ad.reshape(r, (1, -1)), np.zeros(xv.shape[0], dtype=int))
    out = mlp_forward(bundle.decoder, ad.concat([xv, r], axis=1))
    d_y = bundle.d_y
    cols = np.arange(2 * d_y)
    mu = ad.transpose(ad.take(ad.transpose(out), cols[:d_y]))
    var = variance_transform(ad.transpose(ad.take(ad.transpose(out), cols[d_y:])))
    if single:
        mu = ad.reshape(mu, (d_y,))
        var = ad.reshape(var, (d_y,))
    return mu, var


def cnp_predict(bundle, ctx, targets):
    _check_pair(bundle, ctx, targets)
    r = uniform_aggregate(encode_context(bundle, ctx))
    mu, var = decode(bundle, targets.inputs, r)
    return GaussianPrediction(mu, var)


def adacnp_weights(bundle, ctx, targets):
    e_ctx = embed(bundle, ctx.inputs)
    e_tgt = embed(bundle, targets.inputs)
    return softmax_weights(pair_scores(bundle, e_ctx, e_tgt), bundle.tau)


def adacnp_predict(bundle, ctx, targets):
    """Target-conditioned prediction; returns ``(GaussianPrediction, weights)``.

    ``weights`` has shape (n_t, n_c) and each row sums to one.
    """
    _check_pair(bundle, ctx, targets)
    reps = encode_context(bundle, ctx)
    weights = adacnp_weights(bundle, ctx, targets)
    mu, var = decode(bundle, targets.inputs, weighted_aggregate(weights, reps))
    return GaussianPrediction(mu, var), weights


def predict(bundle, ctx, targets):
    """Dispatch on ``bundle.kind``; always returns a GaussianPrediction."""
    if bundle.kind == "adacnp":
        return adacnp_predict(bundle, ctx, targets)[0]
    return cnp_predict(bundle, ctx, targets)


def gaussian_nll(pred, y):
    """Mean over targets and output dims of the Gaussian negative log-density."""
    mv, vv = ad.value_of(pred.mean), ad.value_of(pred.var)
    y = np.asarray(y, dtype=np.float64).reshape(np.shape(mv))
    if np.any(vv <= 0):
        raise ContractError("predictive variance must be positive")
    resid = ad.sub(y, pred.mean)
    terms = ad.add(
        ad.mul(0.5, ad.log(pred.var)),
        ad.div(ad.square(resid), ad.mul(2.0, pred.var)),
    )
    return ad.add(ad.mean(terms), _HALF_LOG_2PI)
