"""Stage-one training: solo goal-conditioned world-model + inverse learning.

Alternates gradient phases (prediction loss on the world model; weighted
inverse + cycle-consistency losses on the inverse models) with environment
collection driven by the planner plus exploration noise. Fully deterministic
given (config, seed).
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .diffcore import OptimizerState, ema_update, optimizer_step
from .env import ParticleEnv
from .errors import NumericalError
from .inverse import InverseModels, inverse_loss, reflection_loss
from .metrics import MetricsWriter
from .planner import ProposalState, plan_step
from .replay import ReplayBuffer
from .worldmodel import Trajectory, WorldModel, world_model_loss


def random_episode(env: ParticleEnv, goal_id: int, seed: int, rng) -> Trajectory:
    """Seed episode under uniform random actions."""
    state, obs = env.reset(goal_id, seed)
    n = env.cfg.n_agents
    obs_list, acts, rews, dones = [obs[0]], [], [], []
    for _ in range(env.cfg.t_max):
        a = rng.uniform(-1.0, 1.0, size=(n, 2))
        state, obs, rew, done = env.step(state, a)
        obs_list.append(obs[0])
        acts.append(a[0])
        rews.append(rew[0])
        dones.append(done)
        if done:
            break
    return Trajectory(
        np.stack(obs_list), np.stack(acts), np.asarray(rews), np.asarray(dones),
        goal_id, seed,
    )


def planned_episode(
    env: ParticleEnv,
    world: WorldModel,
    planner_cfg,
    goal_id: int,
    seed: int,
    rng,
    explore_noise: float = 0.0,
) -> Trajectory:
    """Solo episode driven by the planner (plus exploration noise)."""
    state, obs = env.reset(goal_id, seed)
    g = world.goal_vec(goal_id)
    prop = ProposalState.fresh(planner_cfg, env.cfg.act_dim)
    obs_list, acts, rews, dones = [obs[0]], [], [], []
    for _ in range(env.cfg.t_max):
        b = world.encode(obs[0], g)
        action, prop = plan_step(world, b, g, prop, rng, planner_cfg)
        if explore_noise > 0:
            action = action + explore_noise * rng.standard_normal(2)
        action = np.clip(action, -1.0, 1.0)
        state, obs, rew, done = env.step(state, action[None, :])
        obs_list.append(obs[0])
        acts.append(action)
        rews.append(rew[0])
        dones.append(done)
        if done:
            break
    return Trajectory(
        np.stack(obs_list), np.stack(acts), np.asarray(rews), np.asarray(dones),
        goal_id, seed,
    )


def random_policy_baseline(env: ParticleEnv, episodes: int, seed: int) -> float:
    """Mean episode return of uniform random actions."""
    rng = np.random.default_rng([seed, 7919])
    returns = []
    for e in range(episodes):
        goal = int(rng.integers(env.cfg.n_goals))
        traj = random_episode(env, goal, seed * 1000 + e, rng)
        returns.append(float(traj.rewards.sum()))
    return float(np.mean(returns))


def train_stage_one(cfg: RunConfig, out_dir: str) -> dict:
    """Run the solo training loop; writes metrics.csv, checkpoint/, run.json.

    Returns a summary dict (paths, counters, timings).
    """
    os.makedirs(out_dir, exist_ok=True)
    t_start = time.perf_counter()
    seq = np.random.SeedSequence(cfg.seed)
    rng_init, rng_episode, rng_batch, rng_plan = (
        np.random.default_rng(s) for s in seq.spawn(4)
    )
    env = ParticleEnv(cfg.solo_env_config())
    world, inv = cfg.build_models(rng_init)
    replay = ReplayBuffer(cfg.train.replay_capacity)
    opt_world = OptimizerState.for_params(world.params, lr=cfg.train.lr, clip=cfg.train.grad_clip)
    opt_inverse = OptimizerState.for_params(inv.params, lr=cfg.train.lr, clip=cfg.train.grad_clip)

    for e in range(cfg.train.seed_episodes):
        goal = int(rng_episode.integers(env.cfg.n_goals))
        replay.add(random_episode(env, goal, cfg.seed * 10_000 + e, rng_episode))

    metrics_path = os.path.join(out_dir, "metrics.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint")
    env_steps = 0
    episode_idx = cfg.train.seed_episodes
    returns = []
    try:
        with MetricsWriter(metrics_path, cfg.train.record_wall_time) as writer:
            while env_steps < cfg.train.env_steps:
                phase_t0 = time.perf_counter()
                sums = {"img": 0.0, "rv": 0.0, "inv": 0.0, "ref": 0.0}
                for _ in range(cfg.train.collect_interval):
                    batch = replay.sample(cfg.td.batch_size, cfg.td.seq_len, rng_batch)
                    wv, wg, aux = world_model_loss(world, batch, cfg.td, rng_batch)
                    optimizer_step(opt_world, world.params, wg)
                    ema_update(
                        world.q_target, world.params.subset("q"), cfg.train.q_ema_momentum
                    )
                    iv, ig = inverse_loss(batch, world, inv)
                    rv, rg = reflection_loss(batch, world, inv)
                    combined = {
                        k: cfg.train.inverse_weight * ig[k]
                        + cfg.train.reflection_weight * rg[k]
                        for k in ig
                    }
                    optimizer_step(opt_inverse, inv.params, combined)
                    sums["img"] += aux["loss_img"]
                    sums["rv"] += aux["loss_rv"]
                    sums["inv"] += iv
                    sums["ref"] += rv
                goal = int(rng_episode.integers(env.cfg.n_goals))
                traj = planned_episode(
                    env, world, cfg.planner, goal, cfg.seed * 10_000 + episode_idx,
                    rng_plan, cfg.train.explore_noise,
                )
                replay.add(traj)
                env_steps += len(traj)
                episode_idx += 1
                ep_return = float(traj.rewards.sum())
                returns.append(ep_return)
                c = cfg.train.collect_interval
                writer.write(
                    step=env_steps,
                    loss_img=sums["img"] / c,
                    loss_rv=sums["rv"] / c,
                    loss_inv=sums["inv"] / c,
                    loss_ref=sums["ref"] / c,
                    episode_return=ep_return,
                    success=bool(traj.dones[-1] and len(traj) < env.cfg.t_max),
                    wall_ms=(time.perf_counter() - phase_t0) * 1e3,
                )
    except NumericalError:
        save_checkpoint(
            os.path.join(out_dir, "checkpoint-failure"),
            {"world": world.params, "q_target": world.q_target, "inverse": inv.params},
            meta={"seed": cfg.seed, "diverged": True},
        )
        raise

    save_checkpoint(
        ckpt_path,
        {"world": world.params, "q_target": world.q_target, "inverse": inv.params},
        meta={"seed": cfg.seed, "env_steps": env_steps, "profile": cfg.profile},
    )
    elapsed = time.perf_counter() - t_start
    summary = {
        "metrics": metrics_path,
        "checkpoint": ckpt_path,
        "env_steps": env_steps,
        "episodes": episode_idx,
        "elapsed_s": elapsed,
        "final_return_mean10": float(np.mean(returns[-10:])) if returns else 0.0,
    }
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def load_agent(cfg: RunConfig, ckpt_path: str):
    """Rebuild (world, inverse) models from a stage-one checkpoint."""
    from .checkpoint import load_checkpoint, verify_names

    sets, meta = load_checkpoint(ckpt_path)
    world = WorldModel.init(cfg.world_model_config(), np.random.default_rng(0), zero=True)
    verify_names(sets["world"], world.params.names(), "world")
    verify_names(sets["q_target"], world.q_target.names(), "q_target")
    world.params = sets["world"]
    world.q_target = sets["q_target"]
    inv = InverseModels.init(cfg.inverse_config(), np.random.default_rng(0))
    verify_names(sets["inverse"], inv.params.names(), "inverse")
    inv.params = sets["inverse"]
    return world, inv, meta
