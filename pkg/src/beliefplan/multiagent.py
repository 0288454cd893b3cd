"""Stage-two machinery: teams of solo-trained agents with collective beliefs.

Each agent holds its own frozen world/inverse models plus a trainable
aggregator. During an episode the agent tracks every teammate's mental state
from their observed actions, fuses the predicted neighbor features with its
own into a collective belief, and plans in that refined belief space; inside
the planner's imagination, neighbor features advance along their own
analogical rollouts while the ego candidates advance through the dynamics,
and the fusion is re-applied at each imagined step.

The team goal indexes an assignment pattern; each agent conditions its
(landmark-primitive) world model on its own assignment.
"""

from __future__ import annotations

import numpy as np

from .collective import Aggregator, collective_loss
from .config import RunConfig
from .diffcore import OptimizerState, optimizer_step
from .env import ParticleEnv
from .errors import ArgumentError
from .inverse import InverseModels
from .planner import ProposalState, plan_step
from .worldmodel import WorldModel


class TeamAgent:
    """One agent's models plus its per-teammate mental-state trackers."""

    def __init__(self, index: int, world: WorldModel, inv: InverseModels,
                 aggregator: Aggregator | None):
        self.index = index
        self.world = world
        self.inv = inv
        self.aggregator = aggregator
        self.goal_estimates: dict[int, np.ndarray] = {}

    def reset(self, n_agents: int):
        d_g = self.inv.cfg.goal_dim
        self.goal_estimates = {
            j: np.zeros(d_g) for j in range(n_agents) if j != self.index
        }
        self._prev_feats: np.ndarray | None = None

    def observe_actions(self, last_actions: np.ndarray):
        """Advance every teammate's goal estimate with their latest action and
        cache the neighbor features [predicted next belief; goal estimate]."""
        feats = []
        for j in sorted(self.goal_estimates):
            a_j = last_actions[j]
            g_est = self.inv.goal_step(a_j, self.goal_estimates[j])[0]
            self.goal_estimates[j] = g_est
            b_est = self.inv.belief_readout(a_j, g_est)[0]
            b_pred = self.world.dynamics(b_est, a_j, g_est)
            feats.append(np.concatenate([b_pred, g_est]))
        self._prev_feats = np.stack(feats) if feats else None

    def neighbor_feature_rollout(self, horizon: int) -> list[np.ndarray] | None:
        """Predicted neighbor features for each imagined step.

        Neighbors advance on their own predicted actions through the ego's
        models (analogical continuation); candidate-independent, so computed
        once per planning call.
        """
        if self._prev_feats is None:
            return None
        d_b = self.world.cfg.belief_dim
        feats = self._prev_feats
        out = [feats]
        beliefs = feats[:, :d_b]
        goals = feats[:, d_b:]
        for _ in range(horizon):
            acts = self.world.policy(beliefs, goals)
            goals = self.inv.goal_step(acts, goals)
            b_est = self.inv.belief_readout(acts, goals)
            beliefs = self.world.dynamics(b_est, acts, goals)
            out.append(np.concatenate([beliefs, goals], axis=1))
        return out

    def make_refiner(self, g_own: np.ndarray, horizon: int, zero_neighbors: bool):
        """Belief refiner hook for the planner: fuse each imagined belief
        batch with the (predicted) neighbor features at that step.

        Neighbor transforms are candidate-independent, so their pooled
        vectors are precomputed once per planning call.
        """
        if self.aggregator is None:
            return None
        agg = self.aggregator
        if zero_neighbors or self._prev_feats is None:
            pooled_seq = [np.zeros(agg.cfg.feat_dim)]
        else:
            neighbor_seq = self.neighbor_feature_rollout(horizon)
            pooled_seq = [agg.pooled_vector(n) for n in neighbor_seq]
        d_g = self.world.cfg.goal_dim

        def refiner(h: int, beliefs: np.ndarray) -> np.ndarray:
            pooled = pooled_seq[min(h, len(pooled_seq) - 1)]
            ego = np.concatenate(
                [beliefs, np.broadcast_to(g_own, (beliefs.shape[0], d_g))], axis=1
            )
            return agg.output(ego, pooled)

        return refiner


class TeamRunner:
    """Plans and steps a full team in the multi-agent environment."""

    def __init__(self, cfg: RunConfig, agents: list[TeamAgent]):
        self.cfg = cfg
        self.env = ParticleEnv(cfg.env)
        if len(agents) != cfg.env.n_agents:
            raise ArgumentError("need one agent per environment slot")
        self.agents = agents

    def primitive_goal(self, team_goal: int, agent_idx: int) -> int:
        return int(self.cfg.env.goal_table[team_goal][agent_idx])

    def run_episode(
        self,
        team_goal: int,
        seed: int,
        rng: np.random.Generator,
        explore_noise: float = 0.0,
        zero_neighbors: bool = False,
        collect: bool = False,
    ):
        """One episode; returns (per-agent records, team return, success)."""
        env = self.env
        state, obs = env.reset(team_goal, seed)
        n = env.cfg.n_agents
        for ag in self.agents:
            ag.reset(n)
        props = [
            ProposalState.fresh(self.cfg.planner, env.cfg.act_dim) for _ in range(n)
        ]
        goals = [
            ag.world.goal_vec(self.primitive_goal(team_goal, i))
            for i, ag in enumerate(self.agents)
        ]
        records = {
            "obs": [obs.copy()], "actions": [], "rewards": [], "dones": [],
        }
        success = False
        total = np.zeros(n)
        for t in range(env.cfg.t_max):
            actions = np.empty((n, env.cfg.act_dim))
            for i, ag in enumerate(self.agents):
                b = ag.world.encode(obs[i], goals[i])
                refiner = ag.make_refiner(goals[i], self.cfg.planner.horizon, zero_neighbors)
                a, props[i] = plan_step(
                    ag.world, b, goals[i], props[i], rng, self.cfg.planner, refiner
                )
                if explore_noise > 0:
                    a = a + explore_noise * rng.standard_normal(env.cfg.act_dim)
                actions[i] = np.clip(a, -1.0, 1.0)
            state, obs, rew, done = env.step(state, actions)
            for ag in self.agents:
                ag.observe_actions(actions)
            total += rew
            if collect:
                records["obs"].append(obs.copy())
                records["actions"].append(actions.copy())
                records["rewards"].append(rew.copy())
                records["dones"].append(done)
            if done:
                success = env.team_success(state)
                break
        episode = None
        if collect:
            episode = {
                "obs": np.stack(records["obs"]),
                "actions": np.stack(records["actions"]),
                "rewards": np.stack(records["rewards"]),
                "dones": np.asarray(records["dones"]),
                "team_goal": team_goal,
            }
        return episode, float(total.mean()), success


def collective_training_examples(
    cfg: RunConfig, agents: list[TeamAgent], episode: dict, agent_idx: int
):
    """(ego feature, neighbor features, target belief) triples for one agent
    from a collected multi-agent episode.

    Features at step t predict the agent's actual belief at t+1; neighbor
    mental states are recomputed by analogical inference along the episode.
    """
    ag = agents[agent_idx]
    n = episode["actions"].shape[1]
    T = episode["actions"].shape[0]
    if T < 2:
        return []
    goal_prim = int(cfg.env.goal_table[episode["team_goal"]][agent_idx])
    g_own = ag.world.goal_vec(goal_prim)
    own_obs = episode["obs"][:, agent_idx]
    own_act = episode["actions"][:, agent_idx]
    beliefs = ag.world.encode(own_obs, np.broadcast_to(g_own, (T + 1, g_own.shape[0])))
    examples = []
    trackers = {j: np.zeros(ag.inv.cfg.goal_dim) for j in range(n) if j != agent_idx}
    for t in range(T - 1):
        feats = []
        for j in sorted(trackers):
            a_j = episode["actions"][t, j]
            trackers[j] = ag.inv.goal_step(a_j, trackers[j])[0]
            b_est = ag.inv.belief_readout(a_j, trackers[j])[0]
            b_pred = ag.world.dynamics(b_est, a_j, trackers[j])
            feats.append(np.concatenate([b_pred, trackers[j]]))
        b_pred_own = ag.world.dynamics(beliefs[t], own_act[t], g_own)
        ego_feat = np.concatenate([b_pred_own, g_own])
        examples.append((ego_feat, np.stack(feats), beliefs[t + 1]))
    return examples


def train_stage_two(
    cfg: RunConfig,
    agents: list[TeamAgent],
    rng: np.random.Generator,
    metrics_writer=None,
    start_step: int = 0,
):
    """Train each agent's aggregator on self-supervised fusion targets from
    jointly collected episodes. World and inverse parameters stay frozen.

    Returns (env step count, per-episode log of (return, success, loss)).
    """
    for ag in agents:
        if ag.aggregator is None:
            ag.aggregator = Aggregator.init(cfg.aggregator_config(), rng)
    runner = TeamRunner(cfg, agents)
    opts = [
        OptimizerState.for_params(ag.aggregator.params, lr=cfg.train.collective_lr,
                                  clip=cfg.train.grad_clip)
        for ag in agents
    ]
    frozen = [
        np.concatenate([ag.world.params.flat(), ag.inv.params.flat()]) for ag in agents
    ]
    env_steps = start_step
    log = []
    examples_pool: list[list] = [[] for _ in agents]
    for ep in range(cfg.train.stage_two_episodes):
        goal = int(rng.integers(cfg.env.n_goals))
        episode, team_return, success = runner.run_episode(
            goal, cfg.seed * 20_000 + ep, rng,
            explore_noise=cfg.train.explore_noise / 2, collect=True,
        )
        env_steps += episode["actions"].shape[0]
        loss_sum, loss_n = 0.0, 0
        for i, ag in enumerate(agents):
            examples_pool[i].extend(collective_training_examples(cfg, agents, episode, i))
            examples_pool[i] = examples_pool[i][-2000:]
            for _ in range(cfg.train.stage_two_updates_per_episode):
                pick = rng.integers(0, len(examples_pool[i]))
                ego, neigh, target = examples_pool[i][pick]
                value, grads = collective_loss(ag.aggregator, ego, neigh, target)
                optimizer_step(opts[i], ag.aggregator.params, grads)
                loss_sum += value
                loss_n += 1
        mean_loss = loss_sum / max(loss_n, 1)
        log.append({"return": team_return, "success": success, "loss_col": mean_loss})
        if metrics_writer is not None:
            metrics_writer.write(
                step=env_steps, loss_col=mean_loss,
                episode_return=team_return, success=success,
            )
    for i, ag in enumerate(agents):
        now = np.concatenate([ag.world.params.flat(), ag.inv.params.flat()])
        if not np.array_equal(now, frozen[i]):
            raise ArgumentError("stage two must not touch world/inverse parameters")
    return env_steps, log
