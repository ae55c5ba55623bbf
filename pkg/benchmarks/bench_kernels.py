"""Compiled vs numpy equilibrium kernel on a desk-scenario hour.

    python benchmarks/bench_kernels.py [--population 1000] [--repeat 5]
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from evpricing import bundled_scenario_path, kernels, load_scenario
from evpricing.choice import hour_context


def bench(fn, ctx, X, cfg, repeat):
    args = (ctx.eca, ctx.base_cost, ctx.eps, ctx.servers, ctx.capacity, ctx.service_rate, ctx.power,
            cfg.theta, cfg.mode_code, cfg.msa_max_iters, cfg.msa_tol, cfg.cost_floor)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(X, *args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--population", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--hour", type=int, default=10)
    args = ap.parse_args()

    scenario = load_scenario(bundled_scenario_path("desk"))
    X = np.random.default_rng(0).uniform(0.2, 0.8, (args.population, scenario.n_stations))
    print(f"backend in use: {kernels.BACKEND}; N={args.population}, hour {args.hour}")
    if kernels.compiled_equilibrium_batch is None:
        print("compiled extension not built; only the numpy path is timed")
    print(f"{'mode':<18}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}{'max |diff|':>12}")
    for mode in ("deterministic_dc", "mnl_standard", "mnl_msa"):
        cfg = replace(scenario.choice, mode=mode)
        ctx = hour_context(scenario, args.hour, cfg)
        t_py, out_py = bench(kernels.python_equilibrium_batch, ctx, X, cfg, args.repeat)
        if kernels.compiled_equilibrium_batch is None:
            print(f"{mode:<18}{t_py * 1e3:>10.1f}{'-':>13}{'-':>9}{'-':>12}")
            continue
        t_c, out_c = bench(kernels.compiled_equilibrium_batch, ctx, X, cfg, args.repeat)
        diff = max(float(np.abs(a - b).max()) for a, b in zip(out_py[:4], out_c[:4]))
        print(f"{mode:<18}{t_py * 1e3:>10.1f}{t_c * 1e3:>13.1f}{t_py / t_c:>8.1f}x{diff:>12.1e}")


if __name__ == "__main__":
    main()
