"""Goal-conditioned latent world model.

Heads: belief encoder, forward dynamics, reward predictor, a policy prior,
and an ensemble of value heads with EMA target copies. Reward and value are
discrete regressions over symlog bins. The training loss combines per-step
dynamics consistency (against stop-gradient encoder targets) with reward and
value soft cross-entropies under a geometric time weighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .codec import LogBins
from .diffcore import MlpSpec, ParamBlock, ParameterSet
from .diffcore import autodiff as ad
from .diffcore.nn import mlp_forward, mlp_graph
from .errors import ArgumentError, ConfigError, DimensionError, NumericalError


@dataclass
class WorldModelConfig:
    obs_dim: int
    act_dim: int
    belief_dim: int = 64
    goal_dim: int = 16
    hidden_dim: int = 128
    n_goals: int = 8
    n_q_heads: int = 5
    n_bins: int = 41
    bin_limit: float = 10.0

    def __post_init__(self):
        if self.n_q_heads < 2:
            raise ConfigError("value ensemble needs at least 2 heads")
        if self.n_goals < 1:
            raise ConfigError("need at least one goal id")
        for name in ("obs_dim", "act_dim", "belief_dim", "goal_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class TDConfig:
    discount: float = 0.99
    bootstrap_mix: float = 1.0
    time_decay: float = 0.9
    subset_size: int = 2
    seq_len: int = 8
    batch_size: int = 16

    def __post_init__(self):
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("discount must lie in (0, 1]")
        if not 0.0 <= self.bootstrap_mix <= 1.0:
            raise ConfigError("bootstrap mix must lie in [0, 1]")
        if not 0.0 < self.time_decay < 1.0:
            raise ConfigError("time decay must lie in (0, 1)")
        if self.subset_size != 2:
            raise ConfigError("value-target subset size is fixed at 2")
        if self.seq_len < 1 or self.batch_size < 1:
            raise ConfigError("sequence length and batch size must be positive")


@dataclass
class Trajectory:
    """One episode: T steps of (o, a, r, done) plus the closing observation."""

    obs: np.ndarray  # (T+1, obs_dim)
    actions: np.ndarray  # (T, act_dim)
    rewards: np.ndarray  # (T,)
    dones: np.ndarray  # (T,)
    goal_id: int
    seed: int = 0

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.dones = np.asarray(self.dones, dtype=bool)
        t = self.actions.shape[0]
        if self.obs.shape[0] != t + 1 or self.rewards.shape[0] != t or self.dones.shape[0] != t:
            raise ArgumentError("trajectory field lengths disagree")
        if not np.all(np.isfinite(self.rewards)):
            raise NumericalError("non-finite reward in trajectory")
        if np.any(np.abs(self.actions) > 1.0 + 1e-12):
            raise ArgumentError("trajectory actions exceed the [-1, 1] bounds")

    def __len__(self):
        return self.actions.shape[0]


def _zero_blocks(blocks):
    return [ParamBlock(b.name, b.shape, np.zeros(b.shape)) for b in blocks]


class WorldModel:
    """Parameter container plus forward/inference and graph-mode evaluation."""

    def __init__(self, cfg: WorldModelConfig, params: ParameterSet, q_target: ParameterSet):
        self.cfg = cfg
        self.params = params
        self.q_target = q_target
        self.bins = LogBins(cfg.n_bins, cfg.bin_limit)
        d_in = cfg.belief_dim + cfg.act_dim + cfg.goal_dim
        self.enc_spec = MlpSpec("enc", (cfg.obs_dim + cfg.goal_dim, cfg.hidden_dim, cfg.belief_dim))
        self.dyn_spec = MlpSpec("dyn", (d_in, cfg.hidden_dim, cfg.belief_dim))
        self.rew_spec = MlpSpec("rew", (d_in, cfg.hidden_dim, cfg.n_bins))
        self.q_specs = [
            MlpSpec(f"q{i}", (d_in, cfg.hidden_dim, cfg.n_bins)) for i in range(cfg.n_q_heads)
        ]
        self.pi_spec = MlpSpec(
            "pi", (cfg.belief_dim + cfg.goal_dim, cfg.hidden_dim, cfg.act_dim),
            out_tanh=True, out_scale=0.01,
        )

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, cfg: WorldModelConfig, rng: np.random.Generator, zero: bool = False):
        d_in = cfg.belief_dim + cfg.act_dim + cfg.goal_dim
        specs = [
            MlpSpec("enc", (cfg.obs_dim + cfg.goal_dim, cfg.hidden_dim, cfg.belief_dim)),
            MlpSpec("dyn", (d_in, cfg.hidden_dim, cfg.belief_dim)),
            MlpSpec("rew", (d_in, cfg.hidden_dim, cfg.n_bins), out_scale=0.0),
        ]
        specs += [
            MlpSpec(f"q{i}", (d_in, cfg.hidden_dim, cfg.n_bins), out_scale=0.0)
            for i in range(cfg.n_q_heads)
        ]
        specs.append(
            MlpSpec("pi", (cfg.belief_dim + cfg.goal_dim, cfg.hidden_dim, cfg.act_dim),
                    out_tanh=True, out_scale=0.01)
        )
        blocks = []
        for s in specs:
            blocks += _zero_blocks(s.init_blocks(rng)) if zero else s.init_blocks(rng)
        goal_init = (
            np.zeros((cfg.n_goals, cfg.goal_dim))
            if zero
            else rng.normal(0.0, 1.0, size=(cfg.n_goals, cfg.goal_dim))
        )
        blocks.append(ParamBlock("goal_table", (cfg.n_goals, cfg.goal_dim), goal_init))
        params = ParameterSet(blocks)
        q_target = params.subset("q").copy()
        return cls(cfg, params, q_target)

    # -- inference ----------------------------------------------------------

    def goal_vec(self, goal_id: int) -> np.ndarray:
        table = self.params["goal_table"].values
        if not 0 <= goal_id < table.shape[0]:
            raise ArgumentError(f"goal id {goal_id} outside table of {table.shape[0]}")
        return table[goal_id]

    @staticmethod
    def _join(*parts):
        parts = [np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in parts]
        rows = max(p.shape[0] for p in parts)
        parts = [np.broadcast_to(p, (rows, p.shape[1])) if p.shape[0] == 1 else p for p in parts]
        return np.concatenate(parts, axis=1)

    def encode(self, obs, g) -> np.ndarray:
        squeeze = np.ndim(obs) == 1
        out = mlp_forward(self.params, self._join(obs, g), self.enc_spec)
        return out[0] if squeeze else out

    def dynamics(self, b, a, g) -> np.ndarray:
        squeeze = np.ndim(b) == 1
        out = mlp_forward(self.params, self._join(b, a, g), self.dyn_spec)
        return out[0] if squeeze else out

    def policy(self, b, g) -> np.ndarray:
        squeeze = np.ndim(b) == 1
        out = mlp_forward(self.params, self._join(b, g), self.pi_spec)
        return out[0] if squeeze else out

    def reward_logits(self, b, a, g) -> np.ndarray:
        return mlp_forward(self.params, self._join(b, a, g), self.rew_spec)

    def decode(self, logits: np.ndarray) -> np.ndarray:
        return K.decode_logits(np.atleast_2d(logits), self.bins.centers, None)

    def reward(self, b, a, g) -> np.ndarray:
        return self.decode(self.reward_logits(b, a, g))

    def q_logits(self, b, a, g, head: int, target: bool = False) -> np.ndarray:
        params = self.q_target if target else self.params
        return mlp_forward(params, self._join(b, a, g), self.q_specs[head])

    def q_values(self, b, a, g, target: bool = False) -> np.ndarray:
        """(n_heads, batch) decoded values."""
        x = self._join(b, a, g)
        params = self.q_target if target else self.params
        return np.stack(
            [self.decode(mlp_forward(params, x, s)) for s in self.q_specs]
        )

    def q_mean(self, b, a, g) -> np.ndarray:
        return self.q_values(b, a, g).mean(axis=0)

    def rollout(self, b0, actions, g) -> np.ndarray:
        """Latent rollout: beliefs of length len(actions)+1 starting at b0.

        ``b0`` may be (d_b,) or (V, d_b) with actions (H, d_a) or (V, H, d_a).
        """
        b0 = np.asarray(b0, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        squeeze = b0.ndim == 1
        b = np.atleast_2d(b0)
        acts = actions[None, :, :] if actions.ndim == 2 else actions
        out = [b]
        for h in range(acts.shape[1]):
            b = self.dynamics(b, np.broadcast_to(acts[:, h], (b.shape[0], acts.shape[2])), g)
            out.append(b)
        seq = np.stack(out, axis=1)
        return seq[0] if squeeze else seq

    def score_sequences(self, b0, actions, g, discount, refiner=None) -> np.ndarray:
        """Fused imagined-return scoring of (V, H, d_a) candidate sequences.

        Same math as the generic planner path (discounted decoded rewards
        plus the discounted terminal ensemble mean at the final action), with
        parameter lookups hoisted out of the rollout loop.
        """
        actions = np.asarray(actions, dtype=np.float64)
        v, horizon = actions.shape[0], actions.shape[1]
        cfg = self.cfg
        p = self.params
        dyn_w0 = p["dyn.w0"].values
        dyn_b0 = p["dyn.b0"].values
        dyn_g0 = p["dyn.g0"].values
        dyn_n0 = p["dyn.n0"].values
        dyn_w1 = p["dyn.w1"].values
        dyn_b1 = p["dyn.b1"].values
        rew_w0 = p["rew.w0"].values
        rew_b0 = p["rew.b0"].values
        rew_g0 = p["rew.g0"].values
        rew_n0 = p["rew.n0"].values
        rew_w1 = p["rew.w1"].values
        rew_b1 = p["rew.b1"].values
        d_b, d_a, d_g = cfg.belief_dim, cfg.act_dim, cfg.goal_dim
        x = np.empty((v, d_b + d_a + d_g))
        x[:, d_b + d_a :] = g
        b = np.broadcast_to(b0, (v, d_b)).copy()
        if refiner is not None:
            b = refiner(0, b)
        total = np.zeros(v)
        centers = self.bins.centers
        for h in range(horizon):
            x[:, :d_b] = b
            x[:, d_b : d_b + d_a] = actions[:, h]
            hr = K.lnmish_fwd(x @ rew_w0 + rew_b0, rew_g0, rew_n0)
            total += discount**h * K.decode_logits(hr @ rew_w1 + rew_b1, centers, None)
            hd = K.lnmish_fwd(x @ dyn_w0 + dyn_b0, dyn_g0, dyn_n0)
            b = hd @ dyn_w1 + dyn_b1
            if refiner is not None:
                b = refiner(h + 1, b)
        x[:, :d_b] = b
        x[:, d_b : d_b + d_a] = actions[:, horizon - 1]
        q_acc = np.zeros(v)
        for i in range(cfg.n_q_heads):
            hq = K.lnmish_fwd(
                x @ p[f"q{i}.w0"].values + p[f"q{i}.b0"].values,
                p[f"q{i}.g0"].values,
                p[f"q{i}.n0"].values,
            )
            q_acc += K.decode_logits(hq @ p[f"q{i}.w1"].values + p[f"q{i}.b1"].values, centers, None)
        total += discount**horizon * (q_acc / cfg.n_q_heads)
        return total

    def predict_reward_value(self, b, a, g):
        """(reward logits, decoded reward, per-head value logits, decoded values)."""
        x = self._join(b, a, g)
        r_logits = mlp_forward(self.params, x, self.rew_spec)
        q_logits = np.stack([mlp_forward(self.params, x, s) for s in self.q_specs])
        return (
            r_logits,
            self.decode(r_logits)[0] if np.ndim(b) == 1 else self.decode(r_logits),
            q_logits,
            np.stack([self.decode(q) for q in q_logits]),
        )

    def td_target(self, r, b_next, g, cfg: TDConfig, head_pair, done=False):
        """Conservative bootstrap: r + mix * discount * min of two EMA heads."""
        head_pair = tuple(int(h) for h in head_pair)
        if len(head_pair) != cfg.subset_size:
            raise ArgumentError(f"head pair must have {cfg.subset_size} entries")
        for h in head_pair:
            if not 0 <= h < self.cfg.n_q_heads:
                raise ArgumentError(f"head index {h} outside ensemble")
        r = np.asarray(r, dtype=np.float64)
        if np.ndim(done) == 0 and done:
            return r
        a_next = self.policy(b_next, g)
        vals = self.q_values(b_next, a_next, g, target=True)
        boot = np.minimum(vals[head_pair[0]], vals[head_pair[1]])
        q = r + cfg.bootstrap_mix * cfg.discount * boot
        done = np.asarray(done, dtype=bool)
        return np.where(done, r, q)

    # -- graph-mode pieces --------------------------------------------------

    def graph_join(self, *nodes):
        return ad.concat(list(nodes))

    def graph_encode(self, leaves, obs_node, g_node):
        return mlp_graph(leaves, ad.concat([obs_node, g_node]), self.enc_spec)

    def graph_dynamics(self, leaves, b_node, a_node, g_node):
        return mlp_graph(leaves, ad.concat([b_node, a_node, g_node]), self.dyn_spec)

    def graph_reward_logits(self, leaves, b_node, a_node, g_node):
        return mlp_graph(leaves, ad.concat([b_node, a_node, g_node]), self.rew_spec)

    def graph_q_logits(self, leaves, b_node, a_node, g_node, head: int):
        return mlp_graph(leaves, ad.concat([b_node, a_node, g_node]), self.q_specs[head])

    def graph_policy(self, leaves, b_node, g_node):
        return mlp_graph(leaves, ad.concat([b_node, g_node]), self.pi_spec)


def sample_head_pairs(rng: np.random.Generator, n: int, n_heads: int) -> np.ndarray:
    """(n, 2) uniformly sampled distinct head indices."""
    first = rng.integers(0, n_heads, size=n)
    offset = rng.integers(1, n_heads, size=n)
    return np.stack([first, (first + offset) % n_heads], axis=1)


def prepare_world_targets(
    model: WorldModel, batch: dict, cfg: TDConfig, rng: np.random.Generator
) -> dict:
    """Stop-gradient targets for the prediction loss, frozen at current params.

    Per step: the encoder belief of the next observation, two-hot reward
    weights, and two-hot weights of the conservative TD target computed from
    a fresh uniformly sampled pair of EMA heads per batch element.
    """
    obs, actions = batch["obs"], batch["actions"]
    rewards, dones, goal_ids = batch["rewards"], batch["dones"], batch["goal_ids"]
    B, L = actions.shape[0], actions.shape[1]
    g_vals = model.params["goal_table"].values[goal_ids]
    d_o = obs.shape[2]
    # encode every observation in one batched call
    g_rep = np.repeat(g_vals[:, None, :], L + 1, axis=1).reshape(B * (L + 1), -1)
    all_beliefs = model.encode(obs.reshape(B * (L + 1), d_o), g_rep)
    all_beliefs = all_beliefs.reshape(B, L + 1, -1)
    flat_g = np.repeat(g_vals[:, None, :], L, axis=1).reshape(B * L, -1)
    flat_b = all_beliefs[:, :L].reshape(B * L, -1)
    flat_a = actions.reshape(B * L, -1)
    b_pred = model.dynamics(flat_b, flat_a, flat_g)
    a_next = model.policy(b_pred, flat_g)
    ema_vals = model.q_values(b_pred, a_next, flat_g, target=True)
    pairs = sample_head_pairs(rng, B * L, model.cfg.n_q_heads)
    rows = np.arange(B * L)
    boot = np.minimum(ema_vals[pairs[:, 0], rows], ema_vals[pairs[:, 1], rows])
    flat_r = rewards.reshape(B * L)
    flat_done = dones.reshape(B * L)
    q_t = np.where(flat_done, flat_r, flat_r + cfg.bootstrap_mix * cfg.discount * boot)
    return {
        "belief_next": all_beliefs[:, 1:].reshape(B * L, -1),
        "reward_w": model.bins.encode(flat_r),
        "value_w": model.bins.encode(q_t),
    }


def _flat_weights(cfg: TDConfig, B: int, L: int) -> np.ndarray:
    """Per-row weights for a (B, L) block flattened row-major: decay^t / B."""
    return np.tile(cfg.time_decay ** np.arange(L), B) / B


def world_model_loss(
    model: WorldModel,
    batch: dict,
    cfg: TDConfig,
    rng: np.random.Generator | None = None,
    targets: dict | None = None,
):
    """Multi-step prediction loss over a batch of replay segments.

    ``batch`` holds obs (B, L+1, d_o), actions (B, L, d_a), rewards (B, L),
    dones (B, L), goal_ids (B,). Returns (loss, grads over the world-model
    parameter set, aux dict with the dynamics and reward/value components).
    All timesteps are flattened into one graph; the geometric time weighting
    enters as per-row weights.

    Targets are stop-gradients: pass a frozen ``targets`` bundle (from
    ``prepare_world_targets``) to evaluate the same loss at perturbed
    parameters, e.g. for finite-difference verification.
    """
    if targets is None:
        if rng is None:
            raise ArgumentError("need an rng when targets are not precomputed")
        targets = prepare_world_targets(model, batch, cfg, rng)
    obs, actions, goal_ids = batch["obs"], batch["actions"], batch["goal_ids"]
    B, L = actions.shape[0], actions.shape[1]
    d_o = obs.shape[2]
    leaves = ad.leaves_of(model.params)
    flat_ids = np.repeat(goal_ids, L)
    g_node = ad.gather(leaves["goal_table"], flat_ids)
    o_node = ad.const(obs[:, :L].reshape(B * L, d_o))
    a_node = ad.const(actions.reshape(B * L, -1))

    b_t = model.graph_encode(leaves, o_node, g_node)
    b_pred = model.graph_dynamics(leaves, b_t, a_node, g_node)
    img = ad.row_sumsq(ad.sub(b_pred, ad.const(targets["belief_next"])))
    r_xent = ad.soft_xent(
        model.graph_reward_logits(leaves, b_t, a_node, g_node), targets["reward_w"]
    )
    v_terms = None
    for i in range(model.cfg.n_q_heads):
        xent = ad.soft_xent(
            model.graph_q_logits(leaves, b_t, a_node, g_node, i), targets["value_w"]
        )
        v_terms = xent if v_terms is None else ad.add(v_terms, xent)
    v_mean = ad.scale(v_terms, 1.0 / model.cfg.n_q_heads)

    w = _flat_weights(cfg, B, L)
    w_node = ad.const(w)
    per_row = ad.add(img, ad.add(r_xent, v_mean))
    loss = ad.total_sum(ad.mul(per_row, w_node))
    value, grads = ad.compute_gradients(loss, model.params)
    aux = {
        "loss_img": float((img.value * w).sum()),
        "loss_rv": float(((r_xent.value + v_mean.value) * w).sum()),
    }
    return value, grads, aux


def value_head_loss(
    model: WorldModel,
    batch: dict,
    cfg: TDConfig,
    rng: np.random.Generator | None = None,
    targets: dict | None = None,
):
    """Value-head regression alone (ensemble sum), mainly for gradient checks."""
    if targets is None:
        if rng is None:
            raise ArgumentError("need an rng when targets are not precomputed")
        targets = prepare_world_targets(model, batch, cfg, rng)
    obs, actions, goal_ids = batch["obs"], batch["actions"], batch["goal_ids"]
    B, L = actions.shape[0], actions.shape[1]
    d_o = obs.shape[2]
    leaves = ad.leaves_of(model.params)
    g_node = ad.gather(leaves["goal_table"], np.repeat(goal_ids, L))
    o_node = ad.const(obs[:, :L].reshape(B * L, d_o))
    a_node = ad.const(actions.reshape(B * L, -1))
    b_t = model.graph_encode(leaves, o_node, g_node)
    w_node = ad.const(_flat_weights(cfg, B, L))
    total = None
    for i in range(model.cfg.n_q_heads):
        xent = ad.soft_xent(
            model.graph_q_logits(leaves, b_t, a_node, g_node, i), targets["value_w"]
        )
        term = ad.total_sum(ad.mul(xent, w_node))
        total = term if total is None else ad.add(total, term)
    value, grads = ad.compute_gradients(total, model.params)
    return value, grads
