"""Run configuration: profiles, YAML loading, validation, model builders.

Two profiles exist. ``desk`` (the default) is sized for minute-scale runs
and is what every test uses. ``paper`` documents the reference hyperparameter
set of the original experiments (large dims, 40 planner iterations, horizon
30, replay 1e6); it is runnable in principle but not exercised here. The
planner horizon differs between the profiles on purpose: the reference table
lists 30 while the reported default for evaluation is 15, so desk keeps 15
and paper keeps 30.

Solo (stage-one) training uses goal ids that index landmarks directly, so a
single checkpoint can fill any team role: in a team with goal pattern table
T, agent i conditions its model on primitive goal T[g][i]. The solo
observation layout is padded to the team size so encoders transfer.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .collective import AggregatorConfig
from .env import EnvConfig, ParticleEnv
from .errors import ConfigError
from .inverse import InverseConfig, InverseModels
from .planner import PlannerConfig
from .worldmodel import TDConfig, WorldModel, WorldModelConfig


@dataclass
class TrainConfig:
    seed_episodes: int = 5
    env_steps: int = 30_000
    collect_interval: int = 100
    replay_capacity: int = 100_000
    explore_noise: float = 0.3
    lr: float = 3e-4
    grad_clip: float = 20.0
    q_ema_momentum: float = 0.995
    inverse_weight: float = 0.5
    reflection_weight: float = 0.1
    record_wall_time: bool = False
    # stage two
    stage_two_episodes: int = 60
    stage_two_updates_per_episode: int = 20
    collective_lr: float = 3e-3
    collective_batch: int = 16

    def __post_init__(self):
        if self.seed_episodes < 1 or self.env_steps < 1 or self.collect_interval < 1:
            raise ConfigError("training budgets must be positive")
        if self.explore_noise < 0:
            raise ConfigError("exploration noise must be nonnegative")


@dataclass
class VerifyConfig:
    scenarios: int = 100
    n_goals: int = 8
    goal_dim: int = 8
    act_dim: int = 4
    belief_dim: int = 4
    base_horizon: int = 24
    window: int = 3
    perturbation: float = 0.01
    nonlinear_fraction: float = 0.5
    lipschitz_pairs: int = 1024
    margin_pairs: int = 64
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.scenarios < 1 or self.n_goals < 2:
            raise ConfigError("verification needs >= 1 scenario and >= 2 goals")


@dataclass
class ModelDims:
    belief_dim: int = 64
    goal_dim: int = 16
    hidden_dim: int = 128
    n_q_heads: int = 5
    n_bins: int = 41
    bin_limit: float = 10.0
    inverse_hidden: int = 128


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    dims: ModelDims = field(default_factory=ModelDims)
    td: TDConfig = field(default_factory=TDConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    teacher_momentum: float = 0.995
    adapt_lr: float = 3e-2
    agg_layers: int = 2

    # -- derived builders ---------------------------------------------------

    def solo_env_config(self) -> EnvConfig:
        """Single active agent, landmark-primitive goals, team-sized obs."""
        return EnvConfig(
            n_agents=1,
            n_landmarks=self.env.n_landmarks,
            n_goals=self.env.n_landmarks,
            obs_radius=self.env.obs_radius,
            t_max=self.env.t_max,
            success_radius=self.env.success_radius,
            obs_agent_slots=self.env.n_agents - 1,
            landmarks=self.env.landmarks,
            goal_table=np.arange(self.env.n_landmarks, dtype=np.int64)[:, None],
        )

    def world_model_config(self) -> WorldModelConfig:
        solo = self.solo_env_config()
        return WorldModelConfig(
            obs_dim=solo.obs_dim,
            act_dim=solo.act_dim,
            belief_dim=self.dims.belief_dim,
            goal_dim=self.dims.goal_dim,
            hidden_dim=self.dims.hidden_dim,
            n_goals=self.env.n_landmarks,
            n_q_heads=self.dims.n_q_heads,
            n_bins=self.dims.n_bins,
            bin_limit=self.dims.bin_limit,
        )

    def inverse_config(self) -> InverseConfig:
        return InverseConfig(
            act_dim=2,
            goal_dim=self.dims.goal_dim,
            belief_dim=self.dims.belief_dim,
            hidden_dim=self.dims.inverse_hidden,
            teacher_momentum=self.teacher_momentum,
            adapt_lr=self.adapt_lr,
        )

    def aggregator_config(self) -> AggregatorConfig:
        return AggregatorConfig(
            belief_dim=self.dims.belief_dim,
            goal_dim=self.dims.goal_dim,
            n_layers=self.agg_layers,
        )

    def build_models(self, rng: np.random.Generator):
        world = WorldModel.init(self.world_model_config(), rng)
        inv = InverseModels.init(self.inverse_config(), rng)
        return world, inv


PAPER_OVERRIDES = {
    "dims": {
        "belief_dim": 512,
        "goal_dim": 96,
        "hidden_dim": 512,
        "inverse_hidden": 256,
    },
    "td": {"seq_len": 64, "batch_size": 50},
    "planner": {"iterations": 40, "horizon": 30},
    "train": {
        "env_steps": 500_000,
        "replay_capacity": 1_000_000,
        "collect_interval": 100,
        "seed_episodes": 5,
    },
}


def _apply_overrides(obj, overrides: dict, path: str = ""):
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if not hasattr(obj, key):
            raise ConfigError(f"unknown config key {where!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _apply_overrides(current, value, where)
        else:
            try:
                setattr(obj, key, type(current)(value) if current is not None else value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {where!r}: {exc}") from exc


def _revalidate(cfg: RunConfig):
    # dataclass __post_init__ validation after field mutation
    for section in (cfg.env, cfg.td, cfg.planner, cfg.train, cfg.verify):
        section.__post_init__()


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def make_config(profile: str = "desk", overrides: dict | None = None) -> RunConfig:
    merged = dict(overrides or {})
    if profile == "paper":
        merged = _deep_merge(PAPER_OVERRIDES, merged)
    elif profile != "desk":
        raise ConfigError(f"unknown profile {profile!r} (expected desk|paper)")
    env_over = merged.pop("env", {})
    try:
        env = EnvConfig(**env_over)
    except TypeError as exc:
        raise ConfigError(f"bad env config: {exc}") from exc
    cfg = RunConfig(env=env)
    cfg.profile = profile
    if merged:
        _apply_overrides(cfg, merged)
    _revalidate(cfg)
    return cfg


def load_config(path: str | None, profile: str = "desk", seed: int | None = None) -> RunConfig:
    """Config from a YAML file of key paths mirroring the module names."""
    overrides = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        profile = loaded.pop("profile", profile)
        overrides = loaded
    cfg = make_config(profile, overrides)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    def clean(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: clean(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.integer, np.floating)):
            return obj.item()
        return obj

    return yaml.safe_dump(clean(cfg), sort_keys=True)
