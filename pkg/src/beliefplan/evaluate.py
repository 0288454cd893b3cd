"""Evaluation protocols: success rate, horizon sweep, teammate replacement."""

from __future__ import annotations

import copy
import json
import os

import numpy as np

from .collective import Aggregator
from .config import RunConfig
from .errors import ArgumentError
from .inverse import BeliefTeacher, fewshot_adapt
from .multiagent import TeamAgent, TeamRunner

HORIZON_SWEEP = (5, 10, 15, 20)


def evaluate_team(
    cfg: RunConfig,
    agents: list,
    episodes: int,
    seed: int,
    zero_neighbors: bool = False,
) -> dict:
    """Success rate and mean return over noise-free evaluation episodes."""
    runner = TeamRunner(cfg, agents)
    rng = np.random.default_rng([seed, 31337])
    successes = 0
    returns = []
    for e in range(episodes):
        goal = int(rng.integers(cfg.env.n_goals))
        _, team_return, success = runner.run_episode(
            goal, seed * 50_000 + e, rng, explore_noise=0.0,
            zero_neighbors=zero_neighbors,
        )
        successes += int(success)
        returns.append(team_return)
    return {
        "episodes": episodes,
        "success_rate": successes / episodes,
        "mean_return": float(np.mean(returns)),
    }


def protocol_winrate(cfg: RunConfig, agents: list, episodes: int, seed: int) -> dict:
    full = evaluate_team(cfg, agents, episodes, seed)
    ablated = evaluate_team(cfg, agents, episodes, seed, zero_neighbors=True)
    return {"protocol": "winrate", "seed": seed, "full": full, "zeroed_neighbors": ablated}


def protocol_horizon_sweep(cfg: RunConfig, agents: list, episodes: int, seed: int) -> dict:
    rows = []
    for horizon in HORIZON_SWEEP:
        sweep_cfg = copy.deepcopy(cfg)
        sweep_cfg.planner.horizon = horizon
        result = evaluate_team(sweep_cfg, agents, episodes, seed)
        rows.append({"horizon": horizon, **result})
    return {"protocol": "horizon-sweep", "seed": seed, "rows": rows}


def adapt_team_to_replacement(
    cfg: RunConfig,
    agents: list,
    replaced_idx: int,
    seed: int,
    warmup_episodes: int = 3,
    adapt_iters: int = 20,
):
    """Few-shot adapt every incumbent's belief readout to the new teammate.

    Warmup episodes are collected with the new (unadapted) team; each agent
    then adapts on the observed action stream of its changed partner (the new
    member adapts on the partner whose actions it matches worst).
    """
    runner = TeamRunner(cfg, agents)
    rng = np.random.default_rng([seed, 777])
    streams = []
    for e in range(warmup_episodes):
        goal = int(rng.integers(cfg.env.n_goals))
        episode, _, _ = runner.run_episode(
            goal, seed * 60_000 + e, rng, explore_noise=0.0, collect=True
        )
        streams.append(episode["actions"])
    actions = np.concatenate(streams, axis=0)  # (T, n, d_a)
    traces = []
    for i, ag in enumerate(agents):
        partner = replaced_idx if i != replaced_idx else (replaced_idx + 1) % len(agents)
        teacher = BeliefTeacher.from_models(ag.inv)
        _, _, trace = fewshot_adapt(
            actions[:, partner], ag.inv, teacher, ag.world, iters=adapt_iters
        )
        traces.append(trace)
    return traces


def protocol_teammate_replace(
    cfg: RunConfig,
    population: list,
    episodes: int,
    seed: int,
    adapt_iters: int = 20,
) -> dict:
    """Replace one agent of the leading team with a population member and
    measure success before, after (unadapted), and after few-shot adaptation.

    ``population`` holds agent-builder callables: each returns a fresh
    (world, inverse, aggregator) triple so adaptation cannot leak across arms.
    """
    n = cfg.env.n_agents
    if len(population) < n + 1:
        raise ArgumentError(
            f"teammate replacement needs a population larger than the team ({n})"
        )
    rng = np.random.default_rng([seed, 999])

    def build_team(member_ids):
        agents = []
        for slot, member in enumerate(member_ids):
            world, inv, agg = population[member]()
            agents.append(TeamAgent(slot, world, inv, agg))
        return agents

    base_ids = list(range(n))
    before = evaluate_team(cfg, build_team(base_ids), episodes, seed)

    replaced_slot = int(rng.integers(n))
    newcomer = n + int(rng.integers(len(population) - n))
    swapped_ids = list(base_ids)
    swapped_ids[replaced_slot] = newcomer

    unadapted = evaluate_team(cfg, build_team(swapped_ids), episodes, seed + 1)

    adapted_team = build_team(swapped_ids)
    traces = adapt_team_to_replacement(
        cfg, adapted_team, replaced_slot, seed, adapt_iters=adapt_iters
    )
    adapted = evaluate_team(cfg, adapted_team, episodes, seed + 1)
    t0 = traces[0] if len(traces) else np.zeros(1)
    return {
        "protocol": "teammate-replace",
        "seed": seed,
        "replaced_slot": replaced_slot,
        "newcomer": newcomer,
        "before": before,
        "after_unadapted": unadapted,
        "after_adapted": adapted,
        "adaptation_loss_first": float(t0[0]),
        "adaptation_loss_last": float(t0[-1]),
        "adaptation_traces": [list(map(float, t)) for t in traces],
    }


def write_report(path: str, report: dict):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
