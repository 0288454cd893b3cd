"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .params import GradientSet, ParameterSet


def finite_difference_grads(
    loss_fn, params: ParameterSet, step: float = 1e-5, names=None
) -> GradientSet:
    """Central differences of ``loss_fn(params)`` w.r.t. every block entry.

    ``loss_fn`` must be a pure function of the parameter values; it is called
    2 * n_entries times.
    """
    names = set(names) if names is not None else None
    out = {}
    for block in params:
        if names is not None and block.name not in names:
            continue
        g = np.zeros(block.values.size)
        flat = block.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn(params)
            flat[i] = orig - step
            lo = loss_fn(params)
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * step)
        out[block.name] = g.reshape(block.values.shape)
    return out


def relative_error(analytic: GradientSet, numeric: GradientSet) -> float:
    """Global norm-wise relative deviation between two gradient sets."""
    keys = sorted(numeric)
    a = np.concatenate([np.asarray(analytic[k]).ravel() for k in keys])
    n = np.concatenate([np.asarray(numeric[k]).ravel() for k in keys])
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(
    loss_and_grads, params: ParameterSet, step: float = 1e-5, names=None
) -> float:
    """Relative error between analytic gradients and finite differences.

    ``loss_and_grads(params) -> (loss, GradientSet)`` is evaluated once for
    the analytic side; the scalar loss alone drives the numeric side.
    """
    _, analytic = loss_and_grads(params)
    numeric = finite_difference_grads(
        lambda p: loss_and_grads(p)[0], params, step=step, names=names
    )
    return relative_error(analytic, numeric)
