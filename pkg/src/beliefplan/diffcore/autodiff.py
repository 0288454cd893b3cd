"""Minimal reverse-mode autodiff over float64 numpy arrays.

A fixed primitive set (affine, layer norm, mish/relu/tanh, softmax, soft
cross-entropy, elementwise arithmetic, squared-error reductions, gather,
concat) covers every loss in this package. Graphs are built eagerly by the
functions below; ``backward`` accumulates exact vector-Jacobian products in
reverse topological order.

Forward values are computed by the same kernels the inference paths use, so a
graph evaluation and a plain forward pass agree bitwise.
"""

from __future__ import annotations

import numpy as np

from .. import kernels as K
from ..errors import DimensionError, NumericalError
from .params import ParameterSet

Array = np.ndarray


class Node:
    __slots__ = ("value", "parents", "vjp", "leaf_name", "op")

    def __init__(self, value, parents=(), vjp=None, leaf_name=None, op="leaf"):
        self.value = value
        self.parents = parents
        self.vjp = vjp  # grad_out -> tuple of parent grads (aligned with parents)
        self.leaf_name = leaf_name
        self.op = op


def leaf(name: str, value: Array) -> Node:
    return Node(np.asarray(value, dtype=np.float64), leaf_name=name)


def const(value) -> Node:
    return Node(np.asarray(value, dtype=np.float64), op="const")


def stop_gradient(x: Node) -> Node:
    return Node(x.value, op="sg")


def leaves_of(params: ParameterSet) -> dict[str, Node]:
    return {b.name: leaf(b.name, b.values) for b in params}


def _as2d(x: Array, what: str) -> Array:
    if x.ndim != 2:
        raise DimensionError(f"{what}: expected 2-d array, got shape {x.shape}")
    return x


def affine(x: Node, w: Node, b: Node) -> Node:
    xv, wv, bv = x.value, w.value, b.value
    _as2d(xv, "affine input")
    if xv.shape[1] != wv.shape[0]:
        raise DimensionError(
            f"affine: input width {xv.shape[1]} does not match weight "
            f"{w.leaf_name or 'block'} of shape {wv.shape}"
        )
    y = xv @ wv + bv

    def vjp(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0)

    return Node(y, (x, w, b), vjp, op="affine")


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    y = av @ bv

    def vjp(g):
        return g @ bv.T, av.T @ g

    return Node(y, (a, b), vjp, op="matmul")


def add(a: Node, b: Node) -> Node:
    return Node(a.value + b.value, (a, b), lambda g: (g, g), op="add")


def sub(a: Node, b: Node) -> Node:
    return Node(a.value - b.value, (a, b), lambda g: (g, -g), op="sub")


def mul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    return Node(av * bv, (a, b), lambda g: (g * bv, g * av), op="mul")


def scale(x: Node, c: float) -> Node:
    return Node(x.value * c, (x,), lambda g: (g * c,), op="scale")


def concat(parts: list[Node]) -> Node:
    values = [p.value for p in parts]
    widths = [v.shape[1] for v in values]
    y = np.concatenate(values, axis=1)
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return Node(y, tuple(parts), vjp, op="concat")


def gather(table: Node, ids: Array) -> Node:
    ids = np.asarray(ids, dtype=np.int64)
    y = table.value[ids]

    def vjp(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids, g)
        return (gt,)

    return Node(y, (table,), vjp, op="gather")


def transpose(x: Node) -> Node:
    return Node(x.value.T, (x,), lambda g: (g.T,), op="transpose")


def layer_norm(x: Node, gain: Node, bias: Node) -> Node:
    y, xhat, inv_std = K.layernorm_fwd(x.value, gain.value, bias.value)
    gv = gain.value

    def vjp(g):
        return K.layernorm_bwd(xhat, inv_std, gv, g)

    return Node(y, (x, gain, bias), vjp, op="layer_norm")


def mish(x: Node) -> Node:
    xv = x.value
    return Node(K.mish_fwd(xv), (x,), lambda g: (K.mish_bwd(xv, g),), op="mish")


def relu(x: Node) -> Node:
    xv = x.value
    return Node(np.maximum(xv, 0.0), (x,), lambda g: (g * (xv > 0.0),), op="relu")


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return Node(y, (x,), lambda g: (g * (1.0 - y * y),), op="tanh")


def softmax(x: Node) -> Node:
    s = K.softmax(x.value)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Node(s, (x,), vjp, op="softmax")


def soft_xent(logits: Node, weights: Array) -> Node:
    """Per-row soft cross-entropy against constant target weights."""
    weights = np.asarray(weights, dtype=np.float64)
    loss, probs = K.softxent_fwd(logits.value, weights)

    def vjp(g):
        return (g[:, None] * (probs - weights),)

    return Node(loss, (logits,), vjp, op="soft_xent")


def row_sumsq(x: Node) -> Node:
    """Squared euclidean norm of each row: (B, d) -> (B,)."""
    xv = x.value
    return Node(
        (xv * xv).sum(axis=1), (x,), lambda g: (2.0 * xv * g[:, None],), op="row_sumsq"
    )


def total_sum(x: Node) -> Node:
    xv = x.value
    return Node(
        np.asarray(xv.sum()), (x,), lambda g: (np.broadcast_to(g, xv.shape).copy(),),
        op="total_sum",
    )


def mean_all(x: Node) -> Node:
    xv = x.value
    n = xv.size

    def vjp(g):
        return (np.broadcast_to(g / n, xv.shape).copy(),)

    return Node(np.asarray(xv.mean()), (x,), vjp, op="mean_all")


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _trace_nonfinite(order: list[Node]) -> str:
    for node in order:
        if not np.all(np.isfinite(node.value)):
            return node.op if node.leaf_name is None else f"leaf:{node.leaf_name}"
    return "unknown"


def backward(loss: Node) -> dict[str, Array]:
    """Accumulated gradients of a scalar loss for every reachable leaf."""
    if loss.value.size != 1:
        raise DimensionError(f"backward: loss must be scalar, got {loss.value.shape}")
    order = _topo_order(loss)
    if not np.isfinite(loss.value):
        raise NumericalError(
            f"non-finite loss; first bad node: {_trace_nonfinite(order)}"
        )
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.value)}
    out: dict[str, Array] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.leaf_name is not None:
            prev = out.get(node.leaf_name)
            out[node.leaf_name] = g.copy() if prev is None else prev + g
            continue
        if node.vjp is None:
            continue
        parent_grads = node.vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
    for name, g in out.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(
                f"non-finite gradient for {name}; first bad node: "
                f"{_trace_nonfinite(order)}"
            )
    return out


def compute_gradients(loss: Node, params: ParameterSet):
    """(loss value, gradient set over ``params``). Unreached blocks get zeros."""
    raw = backward(loss)
    grads = {}
    for b in params:
        g = raw.get(b.name)
        grads[b.name] = np.zeros(b.shape) if g is None else g.reshape(b.shape)
    return float(loss.value), grads
