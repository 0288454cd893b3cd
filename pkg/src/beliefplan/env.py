"""Goal-conditioned multi-agent particle world with partial observation.

Point-mass agents on the unit square must each reach the landmark a goal
assigns to them; the team earns a shared bonus (and the episode ends) when
everyone is in place simultaneously. Entities outside an agent's observation
radius are zero-masked. Scripted heterogeneous experts provide
goal-distinguishable behavior for the identification experiments.

Everything is deterministic given (config, goal, seed, action stream).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError

DAMPING = 0.5
ACCEL = 0.05
COLLIDE_RADIUS = 0.12
ACTION_COST = 0.1
TEAM_BONUS = 1.0


def default_goal_table(n_agents: int, n_landmarks: int, n_goals: int) -> np.ndarray:
    """Deterministic agent-to-landmark assignment patterns.

    Assignments with pairwise-distinct landmarks come first (agents' direct
    paths cross, no crowding); tuples with repeats fill in if more goals are
    requested than distinct assignments exist.
    """
    from itertools import permutations, product

    rows: list[tuple] = []
    seen = set()
    for combo in permutations(range(n_landmarks), min(n_agents, n_landmarks)):
        row = tuple(combo[i % len(combo)] for i in range(n_agents))
        if row not in seen:
            rows.append(row)
            seen.add(row)
        if len(rows) >= n_goals:
            break
    if len(rows) < n_goals:
        for row in product(range(n_landmarks), repeat=n_agents):
            if row not in seen:
                rows.append(row)
                seen.add(row)
            if len(rows) >= n_goals:
                break
    if len(rows) < n_goals:
        raise ConfigError(
            f"cannot build {n_goals} distinct goals from {n_landmarks} landmarks"
        )
    return np.asarray(rows, dtype=np.int64)


def default_landmarks(n_landmarks: int) -> np.ndarray:
    ring = [(0.25, 0.25), (0.75, 0.75), (0.75, 0.25), (0.25, 0.75),
            (0.5, 0.2), (0.2, 0.5), (0.8, 0.5), (0.5, 0.8)]
    if n_landmarks > len(ring):
        raise ConfigError(f"at most {len(ring)} landmarks supported")
    return np.array(ring[:n_landmarks])


@dataclass
class EnvConfig:
    n_agents: int = 3
    n_landmarks: int = 4
    n_goals: int = 8
    obs_radius: float = 0.7
    t_max: int = 100
    success_radius: float = 0.1
    obs_agent_slots: int | None = None  # pad observation to a fixed team size
    landmarks: np.ndarray = field(default=None)
    goal_table: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.n_goals < 2:
            raise ConfigError("need at least 2 goals")
        if self.n_agents < 1:
            raise ConfigError("need at least 1 agent")
        if not 0.0 < self.obs_radius <= np.sqrt(2.0):
            raise ConfigError("observation radius must lie in (0, sqrt(2)]")
        if self.landmarks is None:
            self.landmarks = default_landmarks(self.n_landmarks)
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
        if self.goal_table is None:
            self.goal_table = default_goal_table(self.n_agents, self.n_landmarks, self.n_goals)
        self.goal_table = np.asarray(self.goal_table, dtype=np.int64)
        if self.goal_table.shape != (self.n_goals, self.n_agents):
            raise ConfigError("goal table shape must be (n_goals, n_agents)")
        if self.obs_agent_slots is None:
            self.obs_agent_slots = self.n_agents - 1
        if self.obs_agent_slots < self.n_agents - 1:
            raise ConfigError("observation has fewer agent slots than agents")

    @property
    def obs_dim(self) -> int:
        return 4 + 4 * (self.obs_agent_slots + self.n_landmarks)

    @property
    def act_dim(self) -> int:
        return 2


@dataclass
class EnvState:
    pos: np.ndarray  # (n_agents, 2)
    vel: np.ndarray  # (n_agents, 2)
    goal_id: int
    step: int
    seed: int


class ParticleEnv:
    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg

    def reset(self, goal_id: int, seed: int):
        cfg = self.cfg
        if not 0 <= goal_id < cfg.n_goals:
            raise ArgumentError(f"goal id {goal_id} outside [0, {cfg.n_goals})")
        rng = np.random.default_rng([int(seed), int(goal_id)])
        pos = rng.uniform(0.05, 0.95, size=(cfg.n_agents, 2))
        state = EnvState(pos=pos, vel=np.zeros((cfg.n_agents, 2)), goal_id=goal_id,
                         step=0, seed=int(seed))
        return state, self.observe(state)

    def assigned_landmarks(self, goal_id: int) -> np.ndarray:
        return self.cfg.landmarks[self.cfg.goal_table[goal_id]]

    def observe(self, state: EnvState) -> np.ndarray:
        """Per-agent observation: own kinematics plus masked entity slots."""
        cfg = self.cfg
        n = cfg.n_agents
        obs = np.zeros((n, cfg.obs_dim))
        for i in range(n):
            obs[i, 0:2] = state.pos[i]
            obs[i, 2:4] = state.vel[i]
            col = 4
            for j in range(n):
                if j == i:
                    continue
                rel = state.pos[j] - state.pos[i]
                if np.linalg.norm(rel) <= cfg.obs_radius:
                    obs[i, col : col + 2] = rel
                    obs[i, col + 2 : col + 4] = state.vel[j] - state.vel[i]
                col += 4
            col = 4 + 4 * cfg.obs_agent_slots
            for l in range(cfg.n_landmarks):
                rel = cfg.landmarks[l] - state.pos[i]
                if np.linalg.norm(rel) <= cfg.obs_radius:
                    obs[i, col : col + 2] = rel
                col += 4
        return obs

    def step(self, state: EnvState, actions: np.ndarray):
        """Advance one tick: returns (state', observations, rewards, done)."""
        cfg = self.cfg
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (cfg.n_agents, 2):
            raise ArgumentError(
                f"expected one action per agent {(cfg.n_agents, 2)}, got {actions.shape}"
            )
        acts = np.clip(actions, -1.0, 1.0)
        vel = DAMPING * state.vel + ACCEL * acts
        pos = state.pos + vel
        # pairwise positional repulsion: overlapping agents get pushed apart
        for i in range(cfg.n_agents):
            for j in range(i + 1, cfg.n_agents):
                delta = pos[i] - pos[j]
                dist = np.linalg.norm(delta)
                if dist < COLLIDE_RADIUS:
                    direction = delta / dist if dist > 1e-9 else np.array([1.0, 0.0])
                    push = 0.5 * (COLLIDE_RADIUS - dist)
                    pos[i] += push * direction
                    pos[j] -= push * direction
        pos = np.clip(pos, 0.0, 1.0)
        targets = self.assigned_landmarks(state.goal_id)
        dists = np.linalg.norm(pos - targets, axis=1)
        success = bool(np.all(dists <= cfg.success_radius))
        rewards = -dists - ACTION_COST * (acts * acts).sum(axis=1)
        if success:
            rewards = rewards + TEAM_BONUS
        new_state = EnvState(pos=pos, vel=vel, goal_id=state.goal_id,
                             step=state.step + 1, seed=state.seed)
        done = success or new_state.step >= cfg.t_max
        return new_state, self.observe(new_state), rewards, done

    def team_success(self, state: EnvState) -> bool:
        targets = self.assigned_landmarks(state.goal_id)
        dists = np.linalg.norm(state.pos - targets, axis=1)
        return bool(np.all(dists <= self.cfg.success_radius))


@dataclass
class ScriptedPolicyConfig:
    gain: float = 3.0
    style: str = "direct"  # direct | detour-left | detour-right
    noise: float = 0.0
    detour_gain: float = 1.5

    def __post_init__(self):
        if self.gain <= 0:
            raise ConfigError("proportional gain must be positive")
        if self.noise < 0:
            raise ConfigError("noise scale must be nonnegative")
        if self.style not in ("direct", "detour-left", "detour-right"):
            raise ConfigError(f"unknown style {self.style!r}")


def scripted_policy(
    env: ParticleEnv,
    state: EnvState,
    agent_id: int,
    goal_id: int,
    cfg: ScriptedPolicyConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Proportional control toward the assigned landmark with a style-
    dependent lateral bias (scaled by distance, so it vanishes on arrival)."""
    if not 0 <= agent_id < env.cfg.n_agents:
        raise ArgumentError(f"bad agent id {agent_id}")
    if not 0 <= goal_id < env.cfg.n_goals:
        raise ArgumentError(f"bad goal id {goal_id}")
    target = env.cfg.landmarks[env.cfg.goal_table[goal_id][agent_id]]
    to_target = target - state.pos[agent_id]
    action = cfg.gain * to_target
    if cfg.style != "direct":
        perp = np.array([-to_target[1], to_target[0]])
        if cfg.style == "detour-right":
            perp = -perp
        action = action + cfg.detour_gain * perp
    if cfg.noise > 0 and rng is not None:
        action = action + cfg.noise * rng.standard_normal(2)
    return np.clip(action, -1.0, 1.0)


def run_scripted_episode(
    env: ParticleEnv,
    goal_id: int,
    seed: int,
    policies: list[ScriptedPolicyConfig],
    rng: np.random.Generator | None = None,
    max_steps: int | None = None,
):
    """Roll one episode under per-agent scripted experts.

    Returns dict with positions, observations, actions, rewards per step.
    """
    state, obs = env.reset(goal_id, seed)
    n = env.cfg.n_agents
    if len(policies) != n:
        raise ArgumentError("need one scripted policy per agent")
    steps = max_steps if max_steps is not None else env.cfg.t_max
    traj = {"obs": [obs], "actions": [], "rewards": [], "dones": [], "pos": [state.pos.copy()]}
    for _ in range(steps):
        acts = np.stack(
            [scripted_policy(env, state, i, goal_id, policies[i], rng) for i in range(n)]
        )
        state, obs, rew, done = env.step(state, acts)
        traj["obs"].append(obs)
        traj["actions"].append(acts)
        traj["rewards"].append(rew)
        traj["dones"].append(done)
        traj["pos"].append(state.pos.copy())
        if done:
            break
    return {k: np.asarray(v) for k, v in traj.items()}


def write_episode_log(path, records: list[dict]):
    """Line-delimited JSON episode log, one record per step."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":"), sort_keys=True))
            fh.write("\n")


def read_episode_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
