"""Benchmark the numba kernels against their pure-numpy fallbacks.

Micro benchmarks cover every dual-path kernel on planner/training-shaped
arrays; the macro benchmark times one planning call and one world-model
gradient step under the backend selected by BELIEFPLAN_BACKEND (run it twice,
once per backend, to compare end to end):

    python benchmarks/bench_kernels.py
    BELIEFPLAN_BACKEND=numpy python benchmarks/bench_kernels.py --macro-only
"""

import argparse
import time

import numpy as np

import beliefplan.kernels as K


def timeit(fn, *args, repeat=2000):
    fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e6


def micro():
    if not hasattr(K, "mish_fwd_nb"):
        print("numba unavailable; micro comparison skipped")
        return
    rng = np.random.default_rng(0)
    x = rng.normal(size=(64, 128))
    gy = rng.normal(size=(64, 128))
    gain = rng.normal(size=128)
    bias = rng.normal(size=128)
    logits = rng.normal(size=(64, 41))
    weights = np.abs(rng.normal(size=(64, 41)))
    weights /= weights.sum(axis=1, keepdims=True)
    centers = np.linspace(-2.4, 2.4, 41)
    step = centers[1] - centers[0]
    values = rng.normal(size=256)
    _, xhat, istd = K.layernorm_fwd_np(x, gain, bias)

    cases = [
        ("mish_fwd", (x,)),
        ("mish_bwd", (x, gy)),
        ("layernorm_fwd", (x, gain, bias)),
        ("layernorm_bwd", (xhat, istd, gain, gy)),
        ("lnmish_fwd", (x, gain, bias)),
        ("softmax", (logits,)),
        ("softxent_fwd", (logits, weights)),
        ("decode_logits", (logits, centers, None)),
        ("twohot_encode", (values, centers, step)),
    ]
    print(f"{'kernel':18s} {'numba us':>9s} {'numpy us':>9s} {'speedup':>8s}")
    for name, args in cases:
        t_nb = timeit(getattr(K, name + "_nb"), *args)
        t_np = timeit(getattr(K, name + "_np"), *args)
        print(f"{name:18s} {t_nb:9.1f} {t_np:9.1f} {t_np / t_nb:8.2f}x")


def macro():
    from beliefplan.config import make_config
    from beliefplan.planner import ProposalState, plan_step
    from beliefplan.worldmodel import world_model_loss
    from beliefplan.diffcore import OptimizerState, optimizer_step

    print(f"\nbackend: {K.BACKEND}")
    cfg = make_config()
    rng = np.random.default_rng(0)
    world, _ = cfg.build_models(rng)
    solo = cfg.solo_env_config()
    g = world.goal_vec(0)
    b = world.encode(rng.normal(size=solo.obs_dim), g)
    prop = ProposalState.fresh(cfg.planner, 2)
    plan_step(world, b, g, prop, rng, cfg.planner)
    t0 = time.perf_counter()
    n = 20
    for _ in range(n):
        _, prop = plan_step(world, b, g, prop, rng, cfg.planner)
    print(f"plan_step (H=15, U=6, V=64): {(time.perf_counter() - t0) / n * 1e3:.1f} ms")

    batch = {
        "obs": rng.normal(size=(16, 9, solo.obs_dim)),
        "actions": rng.uniform(-1, 1, (16, 8, 2)),
        "rewards": rng.uniform(-1, 1, (16, 8)),
        "dones": np.zeros((16, 8), dtype=bool),
        "goal_ids": rng.integers(0, 4, 16),
    }
    opt = OptimizerState.for_params(world.params)
    world_model_loss(world, batch, cfg.td, rng)
    t0 = time.perf_counter()
    for _ in range(n):
        _, grads, _ = world_model_loss(world, batch, cfg.td, rng)
        optimizer_step(opt, world.params, grads)
    print(f"world-model gradient step (B=16, L=8): {(time.perf_counter() - t0) / n * 1e3:.1f} ms")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--macro-only", action="store_true")
    args = parser.parse_args()
    if not args.macro_only:
        micro()
    macro()
