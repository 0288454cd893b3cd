"""Command-line interface.

Subcommands: train-solo, train-multi, eval, verify-theory, plan-demo, plot.
Exit statuses: 0 success, 1 verification failure, 2 config/argument error,
3 numerical divergence, 4 checkpoint integrity error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig, dump_config, load_config
from .errors import BeliefPlanError
from .metrics import MetricsWriter


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", default=None, help="YAML config path")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--profile", choices=("desk", "paper"), default="desk")
    parser.add_argument("--out", default="runs/out", help="output directory")


def cmd_train_solo(args) -> int:
    from .training import train_stage_one

    cfg = load_config(args.config, args.profile, args.seed)
    summary = train_stage_one(cfg, args.out)
    print(f"stage-one done: {summary['env_steps']} env steps, "
          f"{summary['episodes']} episodes -> {summary['checkpoint']}")
    return 0


def cmd_train_multi(args) -> int:
    from .collective import Aggregator
    from .checkpoint import save_checkpoint
    from .multiagent import TeamAgent, train_stage_two
    from .training import load_agent

    cfg = load_config(args.config, args.profile, args.seed)
    ckpts = args.solo_checkpoint
    if len(ckpts) == 1:
        ckpts = ckpts * cfg.env.n_agents
    if len(ckpts) != cfg.env.n_agents:
        print(f"need 1 or {cfg.env.n_agents} solo checkpoints", file=sys.stderr)
        return 2
    rng = np.random.default_rng(cfg.seed)
    agents = []
    for i, path in enumerate(ckpts):
        world, inv, _ = load_agent(cfg, path)
        agents.append(TeamAgent(i, world, inv, Aggregator.init(cfg.aggregator_config(), rng)))
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    with MetricsWriter(metrics_path, cfg.train.record_wall_time) as writer:
        steps, log = train_stage_two(cfg, agents, rng, writer)
    for i, ag in enumerate(agents):
        save_checkpoint(
            os.path.join(args.out, f"aggregator-{i}"),
            {"aggregator": ag.aggregator.params},
            meta={"agent": i, "seed": cfg.seed},
        )
    successes = sum(1 for row in log if row["success"])
    print(f"stage-two done: {steps} env steps, success "
          f"{successes}/{len(log)} episodes -> {args.out}")
    return 0


def _load_team(cfg: RunConfig, ckpts: list[str], agg_dirs: list[str] | None, rng):
    from .checkpoint import load_checkpoint
    from .collective import Aggregator
    from .multiagent import TeamAgent
    from .training import load_agent

    agents = []
    for i in range(cfg.env.n_agents):
        world, inv, _ = load_agent(cfg, ckpts[i % len(ckpts)])
        agg = Aggregator.init(cfg.aggregator_config(), rng)
        if agg_dirs:
            sets, _ = load_checkpoint(agg_dirs[i % len(agg_dirs)])
            agg.params = sets["aggregator"]
        agents.append(TeamAgent(i, world, inv, agg))
    return agents


def cmd_eval(args) -> int:
    from .evaluate import (
        protocol_horizon_sweep,
        protocol_teammate_replace,
        protocol_winrate,
        write_report,
    )
    from .training import load_agent
    from .collective import Aggregator

    cfg = load_config(args.config, args.profile, args.seed)
    rng = np.random.default_rng(cfg.seed)
    if args.protocol in ("winrate", "horizon-sweep"):
        agents = _load_team(cfg, args.checkpoint, args.aggregator, rng)
        fn = protocol_winrate if args.protocol == "winrate" else protocol_horizon_sweep
        report = fn(cfg, agents, args.episodes, cfg.seed)
    else:
        if len(args.checkpoint) < cfg.env.n_agents + 1:
            print(
                f"teammate replacement needs > {cfg.env.n_agents} checkpoints",
                file=sys.stderr,
            )
            return 2

        def builder(path):
            def build():
                world, inv, _ = load_agent(cfg, path)
                agg = Aggregator.init(cfg.aggregator_config(), np.random.default_rng(cfg.seed))
                return world, inv, agg

            return build

        population = [builder(p) for p in args.checkpoint]
        report = protocol_teammate_replace(cfg, population, args.episodes, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"eval-{args.protocol}.json")
    write_report(path, report)
    print(f"wrote {path}")
    return 0


def cmd_verify_theory(args) -> int:
    from .verify import verify_theory

    cfg = load_config(args.config, args.profile, args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "theory-report.json")
    report, ok = verify_theory(cfg.verify, path)
    print(
        f"{report['scenarios']} scenarios, condition met in "
        f"{report['condition_met']}, violations: "
        f"{ {k: len(v) for k, v in report['violations'].items()} } -> {path}"
    )
    return 0 if ok else 1


def cmd_plan_demo(args) -> int:
    from .env import ParticleEnv, write_episode_log
    from .training import load_agent, planned_episode

    cfg = load_config(args.config, args.profile, args.seed)
    rng = np.random.default_rng(cfg.seed)
    if args.checkpoint:
        world, _, _ = load_agent(cfg, args.checkpoint[0])
    else:
        world, _ = cfg.build_models(rng)
    env = ParticleEnv(cfg.solo_env_config())
    goal = args.goal % env.cfg.n_goals
    traj = planned_episode(env, world, cfg.planner, goal, cfg.seed, rng)
    os.makedirs(args.out, exist_ok=True)
    records = [
        {
            "t": t,
            "obs": traj.obs[t].tolist(),
            "action": traj.actions[t].tolist(),
            "reward": float(traj.rewards[t]),
            "done": bool(traj.dones[t]),
        }
        for t in range(len(traj))
    ]
    path = os.path.join(args.out, "plan-demo.jsonl")
    write_episode_log(path, records)
    print(
        f"goal {goal}: return {traj.rewards.sum():.2f} over {len(traj)} steps -> {path}"
    )
    return 0


def cmd_plot(args) -> int:
    cfg = load_config(args.config, args.profile, args.seed)
    os.makedirs(args.out, exist_ok=True)
    script = os.path.join(args.out, "plots.gp")
    metrics = args.metrics
    with open(script, "w") as fh:
        fh.write("set datafile separator ','\n")
        fh.write("set key autotitle columnhead\n")
        fh.write("set terminal pngcairo size 900,600\n")
        for tag, col in (("return", 7), ("loss_img", 2), ("loss_inv", 4)):
            fh.write(f"set output '{tag}.png'\n")
            fh.write(f"plot '{metrics}' using 1:{col} with lines title '{tag}'\n")
    print(f"wrote {script}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beliefplan")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-solo", help="stage-one solo training")
    _common(p)
    p.set_defaults(fn=cmd_train_solo)

    p = sub.add_parser("train-multi", help="stage-two collective-belief training")
    _common(p)
    p.add_argument("--solo-checkpoint", action="append", required=True)
    p.set_defaults(fn=cmd_train_multi)

    p = sub.add_parser("eval", help="evaluation protocols")
    _common(p)
    p.add_argument("--protocol", choices=("winrate", "horizon-sweep", "teammate-replace"),
                   required=True)
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--aggregator", action="append", default=None)
    p.add_argument("--episodes", type=int, default=100)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify-theory", help="goal-identification theory suite")
    _common(p)
    p.set_defaults(fn=cmd_verify_theory)

    p = sub.add_parser("plan-demo", help="run the planner for one episode")
    _common(p)
    p.add_argument("--checkpoint", action="append", default=None)
    p.add_argument("--goal", type=int, default=0)
    p.set_defaults(fn=cmd_plan_demo)

    p = sub.add_parser("plot", help="emit a gnuplot script for a metrics CSV")
    _common(p)
    p.add_argument("--metrics", default="metrics.csv")
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except BeliefPlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)


if __name__ == "__main__":
    sys.exit(main())
