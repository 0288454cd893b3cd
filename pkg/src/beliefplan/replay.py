"""Episode ring buffer with a boundary-respecting segment sampler."""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError
from .worldmodel import Trajectory


class ReplayBuffer:
    """Ring of trajectories, capacity counted in environment steps.

    Sampled segments are uniform over all valid (episode, start) positions
    and never span two episodes.
    """

    def __init__(self, capacity_steps: int):
        if capacity_steps < 1:
            raise ArgumentError("replay capacity must be positive")
        self.capacity = int(capacity_steps)
        self.episodes: list[Trajectory] = []
        self.total_steps = 0

    def add(self, traj: Trajectory):
        self.episodes.append(traj)
        self.total_steps += len(traj)
        while self.total_steps > self.capacity and len(self.episodes) > 1:
            dropped = self.episodes.pop(0)
            self.total_steps -= len(dropped)

    def n_segments(self, seq_len: int) -> int:
        return sum(max(0, len(ep) - seq_len + 1) for ep in self.episodes)

    def sample(self, batch_size: int, seq_len: int, rng: np.random.Generator) -> dict:
        """Batch of segments: obs (B, L+1, d), actions (B, L, d), rewards,
        dones (B, L), goal_ids (B,)."""
        counts = np.array([max(0, len(ep) - seq_len + 1) for ep in self.episodes])
        total = int(counts.sum())
        if total == 0:
            raise ArgumentError(
                f"no episode long enough for segments of length {seq_len}"
            )
        cumulative = np.cumsum(counts)
        picks = rng.integers(0, total, size=batch_size)
        obs, acts, rews, dones, goals = [], [], [], [], []
        for p in picks:
            ep_idx = int(np.searchsorted(cumulative, p, side="right"))
            start = int(p - (cumulative[ep_idx - 1] if ep_idx else 0))
            ep = self.episodes[ep_idx]
            obs.append(ep.obs[start : start + seq_len + 1])
            acts.append(ep.actions[start : start + seq_len])
            rews.append(ep.rewards[start : start + seq_len])
            dones.append(ep.dones[start : start + seq_len])
            goals.append(ep.goal_id)
        return {
            "obs": np.stack(obs),
            "actions": np.stack(acts),
            "rewards": np.stack(rews),
            "dones": np.stack(dones),
            "goal_ids": np.asarray(goals, dtype=np.int64),
        }
