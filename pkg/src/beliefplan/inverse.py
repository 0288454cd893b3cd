"""Inverse inference of mental states from observed actions.

A recurrent goal tracker consumes one action per step and threads its own
estimate; a belief readout maps (action, goal estimate) to a latent belief.
Training losses: consistency of the inferred goal/belief against the agent's
own training signal, and a cycle-consistency term that regenerates actions
through the frozen policy head. The same models applied to another agent's
action stream give third-person estimates; a short self-supervised adaptation
loop personalizes the belief readout to a new partner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import MlpSpec, OptimizerState, ParameterSet, ema_update, optimizer_step
from .diffcore import autodiff as ad
from .diffcore.nn import mlp_forward, mlp_graph
from .errors import ArgumentError, ConfigError
from .worldmodel import Trajectory, WorldModel


@dataclass
class InverseConfig:
    act_dim: int
    goal_dim: int
    belief_dim: int
    hidden_dim: int = 128
    teacher_momentum: float = 0.995
    adapt_lr: float = 3e-2

    def __post_init__(self):
        if not 0.0 <= self.teacher_momentum <= 1.0:
            raise ConfigError("teacher momentum must lie in [0, 1]")


@dataclass
class MentalState:
    goal: np.ndarray
    belief: np.ndarray
    step: int


class InverseModels:
    """Goal tracker (recurrent) and belief readout, both under one parameter set."""

    def __init__(self, cfg: InverseConfig, params: ParameterSet):
        self.cfg = cfg
        self.goal_spec = MlpSpec(
            "gnet", (cfg.act_dim + cfg.goal_dim, cfg.hidden_dim, cfg.goal_dim),
            hidden_act="relu",
        )
        self.belief_spec = MlpSpec(
            "bnet", (cfg.act_dim + cfg.goal_dim, cfg.hidden_dim, cfg.belief_dim),
            hidden_act="relu",
        )
        self.params = params

    @classmethod
    def init(cls, cfg: InverseConfig, rng: np.random.Generator):
        blocks = MlpSpec(
            "gnet", (cfg.act_dim + cfg.goal_dim, cfg.hidden_dim, cfg.goal_dim),
            hidden_act="relu",
        ).init_blocks(rng)
        blocks += MlpSpec(
            "bnet", (cfg.act_dim + cfg.goal_dim, cfg.hidden_dim, cfg.belief_dim),
            hidden_act="relu",
        ).init_blocks(rng)
        return cls(cfg, ParameterSet(blocks))

    # -- inference ----------------------------------------------------------

    def goal_step(self, action, goal_prev, params=None):
        params = params or self.params
        x = np.concatenate([np.atleast_2d(action), np.atleast_2d(goal_prev)], axis=1)
        return mlp_forward(params, x, self.goal_spec)

    def belief_readout(self, action, goal, params=None):
        params = params or self.params
        x = np.concatenate([np.atleast_2d(action), np.atleast_2d(goal)], axis=1)
        return mlp_forward(params, x, self.belief_spec)

    def infer(self, actions: np.ndarray, g0: np.ndarray | None = None):
        """Per-step goal and belief estimates for (T, d_a) or (B, T, d_a) actions."""
        actions = np.asarray(actions, dtype=np.float64)
        squeeze = actions.ndim == 2
        acts = actions[None] if squeeze else actions
        if acts.shape[1] == 0:
            raise ArgumentError("need at least one observed action")
        B, T = acts.shape[0], acts.shape[1]
        g = (
            np.zeros((B, self.cfg.goal_dim))
            if g0 is None
            else np.broadcast_to(np.atleast_2d(g0), (B, self.cfg.goal_dim)).copy()
        )
        goals = np.empty((B, T, self.cfg.goal_dim))
        beliefs = np.empty((B, T, self.cfg.belief_dim))
        for t in range(T):
            g = self.goal_step(acts[:, t], g)
            goals[:, t] = g
            beliefs[:, t] = self.belief_readout(acts[:, t], g)
        return (goals[0], beliefs[0]) if squeeze else (goals, beliefs)


def infer_mental_states(
    actions: np.ndarray, inv: InverseModels, g0: np.ndarray | None = None
) -> list[MentalState]:
    """Spec-level wrapper: one MentalState per observed action."""
    goals, beliefs = inv.infer(actions, g0)
    return [MentalState(goals[t], beliefs[t], t) for t in range(goals.shape[0])]


def _graph_infer(inv: InverseModels, leaves, acts: np.ndarray):
    """Recurrent graph over a (B, T, d_a) action block.

    Returns per-step goal nodes and the action constants.
    """
    B, T = acts.shape[0], acts.shape[1]
    g = ad.const(np.zeros((B, inv.cfg.goal_dim)))
    goal_nodes = []
    act_nodes = []
    for t in range(T):
        a_t = ad.const(acts[:, t])
        g = mlp_graph(leaves, ad.concat([a_t, g]), inv.goal_spec)
        goal_nodes.append(g)
        act_nodes.append(a_t)
    return goal_nodes, act_nodes


def inverse_loss(
    batch: dict,
    world: WorldModel,
    inv: InverseModels,
    targets: dict | None = None,
    frozen_sg_goals: list | None = None,
):
    """Consistency of inverse reasoning over replay segments.

    Per step: squared error of the inferred goal against the true goal
    embedding plus squared error of the belief readout (on a stop-gradient
    goal estimate) against the encoder belief. Gradients flow only into the
    inverse parameters.

    For finite-difference runs pass frozen ``targets`` and
    ``frozen_sg_goals`` (the stop-gradient branch values at the reference
    parameters), so the numeric loss sees the same constants the analytic
    gradient does.
    """
    acts = batch["actions"]
    if targets is None:
        targets = prepare_inverse_targets(batch, world)
    L = acts.shape[1]
    leaves = ad.leaves_of(inv.params)
    goal_nodes, act_nodes = _graph_infer(inv, leaves, acts)
    g_true = ad.const(targets["goal"])
    total = None
    for t in range(L):
        goal_term = ad.row_sumsq(ad.sub(goal_nodes[t], g_true))
        sg_goal = (
            ad.stop_gradient(goal_nodes[t])
            if frozen_sg_goals is None
            else ad.const(frozen_sg_goals[t])
        )
        b_hat = mlp_graph(leaves, ad.concat([act_nodes[t], sg_goal]), inv.belief_spec)
        belief_term = ad.row_sumsq(ad.sub(b_hat, ad.const(targets["beliefs"][t])))
        term = ad.add(goal_term, belief_term)
        total = term if total is None else ad.add(total, term)
    loss = ad.scale(ad.mean_all(total), 1.0 / L)
    value, grads = ad.compute_gradients(loss, inv.params)
    return value, grads


def prepare_inverse_targets(batch: dict, world: WorldModel) -> dict:
    """Frozen supervision: true goal embeddings and per-step encoder beliefs."""
    if "goal_ids" not in batch:
        raise ArgumentError("inverse loss needs the trajectory goal ids")
    g_vals = world.params["goal_table"].values[batch["goal_ids"]]
    L = batch["actions"].shape[1]
    beliefs = [world.encode(batch["obs"][:, t], g_vals) for t in range(L)]
    return {"goal": g_vals, "beliefs": beliefs}


def reflection_loss(batch: dict, world: WorldModel, inv: InverseModels):
    """Cycle consistency: the frozen policy head, fed the inferred mental
    states, must regenerate the recorded actions. Gradients flow through the
    policy into the inverse parameters only."""
    acts = batch["actions"]
    L = acts.shape[1]
    leaves = ad.leaves_of(inv.params)
    pi_leaves = {
        name: ad.const(world.params[name].values)
        for name in world.params.names()
        if name.startswith("pi")
    }
    goal_nodes, act_nodes = _graph_infer(inv, leaves, acts)
    total = None
    for t in range(L):
        b_hat = mlp_graph(leaves, ad.concat([act_nodes[t], goal_nodes[t]]), inv.belief_spec)
        a_hat = mlp_graph(pi_leaves, ad.concat([b_hat, goal_nodes[t]]), world.pi_spec)
        term = ad.row_sumsq(ad.sub(a_hat, act_nodes[t]))
        total = term if total is None else ad.add(total, term)
    loss = ad.scale(ad.mean_all(total), 1.0 / L)
    value, grads = ad.compute_gradients(loss, inv.params)
    return value, grads


@dataclass
class AnalogicalTrace:
    """Third-person estimates plus one-step predictions, per step."""

    goals: np.ndarray  # (T, d_g)
    beliefs: np.ndarray  # (T, d_b)
    pred_beliefs: np.ndarray  # (T, d_b): dynamics one step ahead
    pred_actions: np.ndarray  # (T, d_a): policy at the inferred state
    observed: int  # how many steps came from real observations


def analogical_rollout(
    observed_actions: np.ndarray,
    world: WorldModel,
    inv: InverseModels,
    steps: int = 0,
) -> AnalogicalTrace:
    """Apply the ego's inverse models to another agent's action stream.

    Beyond the observed steps the rollout continues on its own predicted
    actions for ``steps`` further steps.
    """
    observed_actions = np.asarray(observed_actions, dtype=np.float64)
    if observed_actions.ndim != 2 or observed_actions.shape[0] == 0:
        raise ArgumentError("need at least one observed action")
    T = observed_actions.shape[0]
    goals, beliefs = inv.infer(observed_actions)
    g_list = [goals[t] for t in range(T)]
    b_list = [beliefs[t] for t in range(T)]
    a_list = [observed_actions[t] for t in range(T)]
    pred_b = []
    pred_a = []
    for t in range(T):
        pred_b.append(world.dynamics(b_list[t], a_list[t], g_list[t]))
        pred_a.append(world.policy(b_list[t], g_list[t]))
    for _ in range(steps):
        a_next = pred_a[-1]
        g_next = inv.goal_step(a_next, g_list[-1])[0]
        b_next = inv.belief_readout(a_next, g_next)[0]
        g_list.append(g_next)
        b_list.append(b_next)
        a_list.append(a_next)
        pred_b.append(world.dynamics(b_next, a_next, g_next))
        pred_a.append(world.policy(b_next, g_next))
    return AnalogicalTrace(
        goals=np.stack(g_list),
        beliefs=np.stack(b_list),
        pred_beliefs=np.stack(pred_b),
        pred_actions=np.stack(pred_a),
        observed=T,
    )


def nearest_goal(goal: np.ndarray, codebook: np.ndarray) -> int:
    """Nearest codebook row under cosine similarity (ties -> lowest index)."""
    g = np.asarray(goal, dtype=np.float64)
    rows = np.asarray(codebook, dtype=np.float64)
    sims = rows @ g / (np.linalg.norm(rows, axis=1) * max(np.linalg.norm(g), 1e-12) + 1e-12)
    return int(np.argmax(sims))


@dataclass
class BeliefTeacher:
    """EMA copy of the belief readout used as a stable adaptation target."""

    params: ParameterSet
    momentum: float = 0.995

    @classmethod
    def from_models(cls, inv: InverseModels, momentum: float | None = None):
        m = inv.cfg.teacher_momentum if momentum is None else momentum
        return cls(inv.params.subset("bnet").copy(), m)


def fewshot_objective(
    partner_actions: np.ndarray,
    inv: InverseModels,
    teacher: BeliefTeacher,
    world: WorldModel,
    goals: np.ndarray | None = None,
):
    """Action-conditional temporal-consistency loss (graph over the belief
    readout only; dynamics and teacher frozen). Returns (loss, grads)."""
    acts = np.asarray(partner_actions, dtype=np.float64)
    if acts.shape[0] < 2:
        raise ArgumentError("few-shot adaptation needs at least 2 actions")
    if goals is None:
        goals, _ = inv.infer(acts)
    T = acts.shape[0]
    leaves = ad.leaves_of(inv.params.subset("bnet"))
    dyn_leaves = {
        name: ad.const(world.params[name].values)
        for name in world.params.names()
        if name.startswith("dyn")
    }
    # teacher targets at the shifted step
    targets = mlp_forward(
        teacher.params, np.concatenate([acts[1:], goals[1:]], axis=1), inv.belief_spec
    )
    b_hat = mlp_graph(
        leaves, ad.concat([ad.const(acts[:-1]), ad.const(goals[:-1])]), inv.belief_spec
    )
    pred = mlp_graph(
        dyn_leaves,
        ad.concat([b_hat, ad.const(acts[:-1]), ad.const(goals[:-1])]),
        world.dyn_spec,
    )
    loss = ad.scale(ad.mean_all(ad.row_sumsq(ad.sub(pred, ad.const(targets)))), 1.0 / (T - 1))
    value, grads = ad.compute_gradients(loss, inv.params.subset("bnet"))
    return value, grads


def fewshot_adapt(
    partner_actions: np.ndarray,
    inv: InverseModels,
    teacher: BeliefTeacher,
    world: WorldModel,
    iters: int = 20,
    lr: float | None = None,
):
    """Personalize the belief readout to a new partner's action stream.

    Runs ``iters`` optimizer steps on the temporal-consistency objective,
    updating the EMA teacher after each. Returns (inv, teacher, loss trace).
    """
    acts = np.asarray(partner_actions, dtype=np.float64)
    if acts.shape[0] < 2:
        raise ArgumentError("few-shot adaptation needs at least 2 actions")
    goals, _ = inv.infer(acts)
    student = inv.params.subset("bnet")
    opt = OptimizerState.for_params(student, lr=inv.cfg.adapt_lr if lr is None else lr)
    trace = []
    for _ in range(iters):
        value, grads = fewshot_objective(acts, inv, teacher, world, goals)
        trace.append(value)
        optimizer_step(opt, student, grads)
        ema_update(teacher.params, student, teacher.momentum)
    return inv, teacher, np.array(trace)
