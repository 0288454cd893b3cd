"""Dense-network evaluation over ParamBlocks.

Two entry points share the same kernels and weight layout:

* ``mlp_forward`` — plain numpy inference, no graph.
* ``mlp_graph`` — builds autodiff nodes for loss construction.
"""

from __future__ import annotations

import numpy as np

from .. import kernels as K
from ..errors import DimensionError
from . import autodiff as ad
from .params import MlpSpec, ParameterSet


def _check_input(spec: MlpSpec, x: np.ndarray):
    if x.shape[1] != spec.sizes[0]:
        raise DimensionError(
            f"{spec.prefix}: input width {x.shape[1]} != declared {spec.sizes[0]}"
        )


def mlp_forward(params: ParameterSet, x: np.ndarray, spec: MlpSpec) -> np.ndarray:
    """Deterministic forward pass; ``x`` is (batch, in) or (in,)."""
    squeeze = x.ndim == 1
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_input(spec, h)
    act = K.mish_fwd if spec.hidden_act == "mish" else lambda v: np.maximum(v, 0.0)
    for i in range(spec.n_layers):
        w = params[f"{spec.prefix}.w{i}"].values
        b = params[f"{spec.prefix}.b{i}"].values
        if h.shape[1] != w.shape[0]:
            raise DimensionError(
                f"{spec.prefix}.w{i}: input width {h.shape[1]} != {w.shape[0]}"
            )
        h = h @ w + b
        if i < spec.n_layers - 1:
            g = params[f"{spec.prefix}.g{i}"].values
            n = params[f"{spec.prefix}.n{i}"].values
            h = K.layernorm_fwd(h, g, n)[0]
            h = act(h)
        elif spec.out_tanh:
            h = np.tanh(h)
    return h[0] if squeeze else h


def mlp_graph(leaves: dict[str, ad.Node], x: ad.Node, spec: MlpSpec) -> ad.Node:
    """Graph-mode forward: ``leaves`` maps block names to autodiff leaves."""
    _check_input(spec, x.value)
    h = x
    for i in range(spec.n_layers):
        h = ad.affine(h, leaves[f"{spec.prefix}.w{i}"], leaves[f"{spec.prefix}.b{i}"])
        if i < spec.n_layers - 1:
            h = ad.layer_norm(
                h, leaves[f"{spec.prefix}.g{i}"], leaves[f"{spec.prefix}.n{i}"]
            )
            h = ad.mish(h) if spec.hidden_act == "mish" else ad.relu(h)
        elif spec.out_tanh:
            h = ad.tanh(h)
    return h
