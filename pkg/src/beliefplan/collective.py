"""Permutation-invariant aggregation of inferred neighbor mental states.

The unordered neighbor feature set goes through L rounds of full-set
self-attention with a pointwise feedforward update, then an order-invariant
softmax pooling over scalar scores; the pooled vector is joined with the
ego's own feature and projected to a belief. Trained by regression onto the
ego's actual next belief (stop-gradient target).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .diffcore import ParamBlock, ParameterSet
from .diffcore import autodiff as ad
from .errors import ArgumentError, ConfigError


@dataclass
class AggregatorConfig:
    belief_dim: int
    goal_dim: int
    n_layers: int = 2
    # feature width d = belief_dim + goal_dim; key/query and pooled widths
    # default to the feature width at desk scale

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("need at least one attention layer")

    @property
    def feat_dim(self) -> int:
        return self.belief_dim + self.goal_dim


class Aggregator:
    """Set-attention belief fusion; one instance per agent."""

    def __init__(self, cfg: AggregatorConfig, params: ParameterSet):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: AggregatorConfig, rng: np.random.Generator):
        d = cfg.feat_dim
        blocks = []
        for layer in range(cfg.n_layers):
            for tag in ("wq", "wk", "wv", "wo"):
                blocks.append(
                    ParamBlock(f"agg.l{layer}.{tag}", (d, d), rng.normal(0, 1 / math.sqrt(d), (d, d)))
                )
            blocks.append(
                ParamBlock(f"agg.l{layer}.w1", (d, d), rng.normal(0, 1 / math.sqrt(d), (d, d)))
            )
            blocks.append(ParamBlock(f"agg.l{layer}.b1", (d,), np.zeros(d)))
            blocks.append(
                ParamBlock(f"agg.l{layer}.w2", (d, d), rng.normal(0, 1 / math.sqrt(d), (d, d)))
            )
            blocks.append(ParamBlock(f"agg.l{layer}.b2", (d,), np.zeros(d)))
        blocks.append(ParamBlock("agg.score.w", (d, 1), rng.normal(0, 1 / math.sqrt(d), (d, 1))))
        blocks.append(ParamBlock("agg.score.c", (1,), np.zeros(1)))
        blocks.append(ParamBlock("agg.pool.w", (d, d), rng.normal(0, 1 / math.sqrt(d), (d, d))))
        blocks.append(ParamBlock("agg.pool.b", (d,), np.zeros(d)))
        blocks.append(
            ParamBlock(
                "agg.out.w", (2 * d, cfg.belief_dim),
                rng.normal(0, 1 / math.sqrt(2 * d), (2 * d, cfg.belief_dim)),
            )
        )
        blocks.append(ParamBlock("agg.out.b", (cfg.belief_dim,), np.zeros(cfg.belief_dim)))
        return cls(cfg, ParameterSet(blocks))

    def _check_width(self, x: np.ndarray, what: str):
        if x.shape[-1] != self.cfg.feat_dim:
            raise ArgumentError(
                f"{what} width {x.shape[-1]} != feature width {self.cfg.feat_dim}"
            )

    # -- inference ----------------------------------------------------------

    def transform_set(self, feats: np.ndarray) -> np.ndarray:
        """L rounds of full-set self-attention + feedforward on (n, d)."""
        p = self.params
        x = feats
        scale = 1.0 / math.sqrt(self.cfg.feat_dim)
        for layer in range(self.cfg.n_layers):
            q = x @ p[f"agg.l{layer}.wq"].values
            k = x @ p[f"agg.l{layer}.wk"].values
            v = x @ p[f"agg.l{layer}.wv"].values
            alpha = K.softmax(q @ k.T * scale)
            attn = (alpha @ v) @ p[f"agg.l{layer}.wo"].values
            h = K.mish_fwd(attn @ p[f"agg.l{layer}.w1"].values + p[f"agg.l{layer}.b1"].values)
            x = h @ p[f"agg.l{layer}.w2"].values + p[f"agg.l{layer}.b2"].values
        return x

    def pool(self, transformed: np.ndarray):
        """Softmax pooling weights and the pooled vector over (n, d)."""
        p = self.params
        scores = (transformed @ p["agg.score.w"].values)[:, 0] + p["agg.score.c"].values[0]
        beta = K.softmax(scores[None, :])[0]
        u = K.mish_fwd(transformed @ p["agg.pool.w"].values + p["agg.pool.b"].values)
        return beta, beta @ u

    def pooled_vector(self, neighbors: np.ndarray) -> np.ndarray:
        """Order-invariant pooled summary of a neighbor multiset (0 if empty)."""
        neighbors = np.asarray(neighbors, dtype=np.float64).reshape(-1, self.cfg.feat_dim)
        if neighbors.shape[0] == 0:
            return np.zeros(self.cfg.feat_dim)
        self._check_width(neighbors, "neighbor features")
        return self.pool(self.transform_set(neighbors))[1]

    def output(self, ego_feature: np.ndarray, pooled: np.ndarray):
        """Final projection of [ego feature; pooled vector] to a belief."""
        ego = np.asarray(ego_feature, dtype=np.float64)
        self._check_width(np.atleast_2d(ego), "ego feature")
        p = self.params
        squeeze = ego.ndim == 1
        ego2 = np.atleast_2d(ego)
        joint = np.concatenate(
            [ego2, np.broadcast_to(pooled, (ego2.shape[0], pooled.shape[0]))], axis=1
        )
        out = K.mish_fwd(joint @ p["agg.out.w"].values + p["agg.out.b"].values)
        return out[0] if squeeze else out

    def aggregate(self, ego_feature: np.ndarray, neighbors: np.ndarray):
        """Collective belief from the ego's feature and a neighbor multiset.

        ``neighbors`` is (n, d); an empty set pools to a zero vector.
        Batched ego variant: ``ego_feature`` may be (B, d) with the same
        neighbor set shared across the batch.
        """
        return self.output(ego_feature, self.pooled_vector(neighbors))

    # -- graph mode ---------------------------------------------------------

    def graph_aggregate(self, leaves, ego_node: ad.Node, neighbors: np.ndarray) -> ad.Node:
        """Autodiff twin of ``aggregate`` for a single ego feature row."""
        neighbors = np.asarray(neighbors, dtype=np.float64).reshape(-1, self.cfg.feat_dim)
        if neighbors.shape[0] == 0:
            pooled = ad.const(np.zeros((1, self.cfg.feat_dim)))
        else:
            x = ad.const(neighbors)
            scale = 1.0 / math.sqrt(self.cfg.feat_dim)
            for layer in range(self.cfg.n_layers):
                q = ad.matmul(x, leaves[f"agg.l{layer}.wq"])
                k = ad.matmul(x, leaves[f"agg.l{layer}.wk"])
                v = ad.matmul(x, leaves[f"agg.l{layer}.wv"])
                alpha = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)), scale))
                attn = ad.matmul(ad.matmul(alpha, v), leaves[f"agg.l{layer}.wo"])
                h = ad.mish(ad.affine(attn, leaves[f"agg.l{layer}.w1"], leaves[f"agg.l{layer}.b1"]))
                x = ad.affine(h, leaves[f"agg.l{layer}.w2"], leaves[f"agg.l{layer}.b2"])
            scores = ad.affine(x, leaves["agg.score.w"], leaves["agg.score.c"])
            beta = ad.softmax(ad.transpose(scores))
            u = ad.mish(ad.affine(x, leaves["agg.pool.w"], leaves["agg.pool.b"]))
            pooled = ad.matmul(beta, u)
        joint = ad.concat([ego_node, pooled])
        return ad.mish(ad.affine(joint, leaves["agg.out.w"], leaves["agg.out.b"]))


def collective_loss(agg: Aggregator, ego_feature, neighbors, target_belief):
    """Squared error of the aggregated belief against the actual next belief
    (stop-gradient target). Returns (loss, grads over the aggregator set)."""
    target = np.asarray(target_belief, dtype=np.float64)
    if target.shape[-1] != agg.cfg.belief_dim:
        raise ArgumentError("target belief width mismatch")
    leaves = ad.leaves_of(agg.params)
    out = agg.graph_aggregate(leaves, ad.const(np.atleast_2d(ego_feature)), neighbors)
    loss = ad.total_sum(ad.row_sumsq(ad.sub(out, ad.const(np.atleast_2d(target)))))
    value, grads = ad.compute_gradients(loss, agg.params)
    return value, grads
