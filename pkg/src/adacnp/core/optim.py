"""Adaptive-moment (Adam) parameter updates on named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from adacnp.errors import DimensionError


@dataclass(frozen=True)
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        zeros = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(m=zeros, v={k: z.copy() for k, z in zeros.items()}, **hyper)


def optimizer_step(params, grads, state):
    """One Adam update; returns ``(new_params, new_state)`` and mutates nothing."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise DimensionError("parameter, gradient and optimizer keys differ")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise DimensionError(
                f"{k}: parameter {p.shape}, gradient {g.shape}, moment {state.m[k].shape}"
            )
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k] = m
        new_v[k] = v
    new_state = AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)
    return new_p, new_state
