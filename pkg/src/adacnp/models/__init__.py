from adacnp.models.bundle import (
    ModelBundle, ModelConfig, init_bundle, load_bundle, pack_bundle, save_bundle, unpack_bundle,
)
from adacnp.models.gp import GpConfig, fit_gp, gp_predict
from adacnp.models.processes import (
    VAR_FLOOR, ContextSet, GaussianPrediction, TargetBatch,
    adacnp_predict, cnp_predict, decode, embed, encode_context, gaussian_nll,
    pair_scores, predict, score, softmax_weights, uniform_aggregate, weighted_aggregate,
)

__all__ = [
    "ModelBundle", "ModelConfig", "init_bundle", "load_bundle", "pack_bundle",
    "save_bundle", "unpack_bundle", "GpConfig", "fit_gp", "gp_predict",
    "VAR_FLOOR", "ContextSet", "GaussianPrediction", "TargetBatch",
    "adacnp_predict", "cnp_predict", "decode", "embed", "encode_context",
    "gaussian_nll", "pair_scores", "predict", "score", "softmax_weights",
    "uniform_aggregate", "weighted_aggregate",
]
