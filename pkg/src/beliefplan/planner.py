"""Sampling-based model-predictive control in belief space.

Iteratively refines a diagonal Gaussian over action sequences toward high
imagined return: sample candidates, score them through the latent model,
refit mean/std to the exponentially weighted elites, repeat. One candidate
slot always carries the pure policy-prior rollout and, from the second
iteration on, another carries the incumbent best sequence, which makes the
best elite score non-decreasing across iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError


@dataclass
class PlannerConfig:
    horizon: int = 15
    iterations: int = 6
    candidates: int = 64
    elites: int = 6
    init_std: float = 0.5
    std_floor: float = 0.05
    discount: float = 0.99
    temperature: float = 0.5

    def __post_init__(self):
        if not 1 <= self.elites <= self.candidates:
            raise ConfigError("need 1 <= elites <= candidates")
        if self.std_floor <= 0:
            raise ConfigError("std floor must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass
class ProposalState:
    """Gaussian proposal per (step, action dim), plus the warm-start cache."""

    mean: np.ndarray  # (H, act_dim)
    std: np.ndarray  # (H, act_dim)

    @classmethod
    def fresh(cls, cfg: PlannerConfig, act_dim: int):
        return cls(
            mean=np.zeros((cfg.horizon, act_dim)),
            std=np.full((cfg.horizon, act_dim), cfg.init_std),
        )


def score_sequences(model, b0, actions, g, discount, refiner=None) -> np.ndarray:
    """Imagined return of (V, H, act_dim) sequences from shared belief ``b0``.

    Discounted decoded rewards over the horizon plus the discounted terminal
    value (mean of the online ensemble) at the final belief and the last
    action of each sequence. ``refiner`` optionally maps the belief batch at
    each imagined step (collective-belief conditioning).
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 3:
        raise ArgumentError("score_sequences expects (V, H, act_dim) actions")
    fused = getattr(model, "score_sequences", None)
    if fused is not None:
        return fused(b0, actions, g, discount, refiner)
    v, horizon = actions.shape[0], actions.shape[1]
    beliefs = np.broadcast_to(b0, (v, b0.shape[-1])).copy()
    if refiner is not None:
        beliefs = refiner(0, beliefs)
    total = np.zeros(v)
    for h in range(horizon):
        total += discount**h * model.reward(beliefs, actions[:, h], g)
        beliefs = model.dynamics(beliefs, actions[:, h], g)
        if refiner is not None:
            beliefs = refiner(h + 1, beliefs)
    total += discount**horizon * model.q_mean(beliefs, actions[:, horizon - 1], g)
    return total


def score_sequence(model, b0, actions, g, discount, refiner=None) -> float:
    """Single-sequence convenience wrapper around ``score_sequences``."""
    actions = np.asarray(actions, dtype=np.float64)
    return float(score_sequences(model, b0, actions[None], g, discount, refiner)[0])


def _policy_rollout(model, b0, g, horizon, refiner=None) -> np.ndarray:
    b = np.atleast_2d(b0)
    if refiner is not None:
        b = refiner(0, b)
    acts = np.empty((horizon, model.cfg.act_dim))
    for h in range(horizon):
        acts[h] = model.policy(b, g)[0]
        b = model.dynamics(b, acts[h][None], g)
        if refiner is not None:
            b = refiner(h + 1, b)
    return acts


def plan_step(
    model,
    b: np.ndarray,
    g: np.ndarray,
    prev: ProposalState,
    rng: np.random.Generator,
    cfg: PlannerConfig,
    refiner=None,
):
    """One planning call: refine the proposal, return (action, next proposal).

    The returned proposal is time-shifted for warm-starting the next call;
    its tail is padded with the policy prior at the last imagined belief and
    the configured initial std.
    """
    horizon, act_dim = prev.mean.shape
    if horizon != cfg.horizon:
        raise ConfigError("proposal horizon does not match planner config")
    mean = prev.mean.copy()
    std = np.maximum(prev.std, cfg.std_floor)
    prior_seq = _policy_rollout(model, b, g, horizon, refiner)
    best_seq = None
    best_score = -np.inf
    for _ in range(cfg.iterations):
        noise = rng.standard_normal((cfg.candidates, horizon, act_dim))
        cands = np.clip(mean + std * noise, -1.0, 1.0)
        cands[0] = prior_seq
        if best_seq is not None:
            cands[1 % cfg.candidates] = best_seq
        scores = score_sequences(model, b, cands, g, cfg.discount, refiner)
        order = np.argsort(scores)[::-1]
        elite_idx = order[: cfg.elites]
        elite_scores = scores[elite_idx]
        if elite_scores[0] >= best_score:
            best_score = elite_scores[0]
            best_seq = cands[elite_idx[0]].copy()
        # scale-invariant softmax: normalize score gaps by the elite spread
        spread = float(elite_scores.std()) + 1e-9
        w = np.exp((elite_scores - elite_scores[0]) / (cfg.temperature * spread))
        w /= w.sum()
        elite = cands[elite_idx]
        mean = np.einsum("e,ehd->hd", w, elite)
        var = np.einsum("e,ehd->hd", w, (elite - mean) ** 2)
        std = np.maximum(np.sqrt(var), cfg.std_floor)
    action = np.clip(mean[0].copy(), -1.0, 1.0)
    next_mean = np.roll(mean, -1, axis=0)
    next_std = np.roll(std, -1, axis=0)
    last_belief = model.rollout(b, mean, g)[-1]
    next_mean[-1] = model.policy(last_belief, g)
    next_std[-1] = cfg.init_std
    return action, ProposalState(next_mean, next_std)
