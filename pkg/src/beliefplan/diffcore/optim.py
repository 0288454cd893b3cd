"""Adaptive-moment optimizer with global-norm clipping, and EMA tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericalError
from .params import GradientSet, ParameterSet, check_congruent


@dataclass
class OptimizerState:
    """Per-parameter first/second moments plus the step counter."""

    lr: float = 3e-4
    clip: float = 20.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterSet, lr: float = 3e-4, clip: float = 20.0):
        st = cls(lr=lr, clip=clip)
        st.m = params.zeros_like()
        st.v = params.zeros_like()
        return st


def global_norm(grads: GradientSet) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return math.sqrt(total)


def optimizer_step(state: OptimizerState, params: ParameterSet, grads: GradientSet):
    """One clipped Adam update, mutating ``params`` and ``state`` in place.

    Non-finite gradients are rejected before any state is touched.
    """
    check_congruent(params, grads)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in block {name!r}")
    norm = global_norm(grads)
    factor = state.clip / norm if state.clip > 0 and norm > state.clip else 1.0
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for b in params:
        g = grads[b.name] * factor
        m = state.m[b.name]
        v = state.v[b.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        b.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def ema_update(target: ParameterSet, online: ParameterSet, momentum: float):
    """target <- momentum * target + (1 - momentum) * online, elementwise."""
    if not 0.0 <= momentum <= 1.0:
        raise ConfigError(f"EMA momentum must lie in [0, 1], got {momentum}")
    for b in target:
        ob = online[b.name]
        if ob.values.shape != b.values.shape:
            raise ConfigError(f"EMA shape mismatch for block {b.name!r}")
        # incremental form: exact fixed point when target == online
        b.values += (1.0 - momentum) * (ob.values - b.values)
    return target
