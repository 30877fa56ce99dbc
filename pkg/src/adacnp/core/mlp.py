"""Multilayer perceptrons whose parameters may be arrays or tape variables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adacnp.core import autodiff as ad
from adacnp.errors import ContractError, DimensionError

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


@dataclass(frozen=True)
class MlpParams:
    """Weights ``W[k]`` of shape (sizes[k+1], sizes[k]) and biases ``b[k]``.

    Entries are float64 arrays, or :class:`~adacnp.core.autodiff.Var` nodes
    when the network has been lifted onto a tape for differentiation.
    """

    layer_sizes: tuple
    weights: tuple
    biases: tuple
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))
        if len(sizes) < 2:
            raise ContractError("an MLP needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        n_layers = len(sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise DimensionError(
                f"{n_layers} layers declared but got {len(self.weights)} weights "
                f"and {len(self.biases)} biases"
            )
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if tuple(w.shape) != (sizes[k + 1], sizes[k]):
                raise DimensionError(
                    f"layer {k} weight has shape {tuple(w.shape)}, "
                    f"expected {(sizes[k + 1], sizes[k])}"
                )
            if tuple(b.shape) != (sizes[k + 1],):
                raise DimensionError(
                    f"layer {k} bias has shape {tuple(b.shape)}, expected {(sizes[k + 1],)}"
                )

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    def named(self, prefix):
        """Flat ``{name: array}`` mapping in declaration order."""
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{k}"] = w
            out[f"{prefix}.b{k}"] = b
        return out

    def replace(self, mapping, prefix):
        """Copy with parameters taken from ``mapping`` (as produced by :meth:`named`)."""
        n = len(self.weights)
        return MlpParams(
            self.layer_sizes,
            [mapping[f"{prefix}.W{k}"] for k in range(n)],
            [mapping[f"{prefix}.b{k}"] for k in range(n)],
            self.activation,
        )


def init_mlp(layer_sizes, rng, activation="relu"):
    """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(tuple(layer_sizes), weights, biases, activation)


def mlp_forward(params, x):
    """Apply the network to one input vector or to a batch of row vectors.

    Hidden layers are affine followed by the activation; the last layer is
    affine only.
    """
    xv = ad.value_of(x)
    if xv.ndim not in (1, 2) or xv.shape[-1] != params.n_in:
        raise DimensionError(
            f"input of shape {xv.shape} does not match network input size {params.n_in}"
        )
    single = xv.ndim == 1
    h = ad.reshape(x, (1, -1)) if single else x
    act = ACTIVATIONS[params.activation]
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add(ad.matmul(h, ad.transpose(w)), b)
        if k < last:
            h = act(h)
    return ad.reshape(h, (params.n_out,)) if single else h
