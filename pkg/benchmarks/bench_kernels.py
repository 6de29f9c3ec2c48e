"""Compare the numba kernels against the pure-numpy fallback.

The backend is chosen once at import time from TIPPING_LAB_BACKEND, so this
script re-runs itself in a subprocess per backend and prints a table.

    python3 benchmarks/bench_kernels.py [--agents 20000] [--paths 2000]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _measure(n_agents, n_paths):
    from tipping_lab import active_backend
    from tipping_lab.abm import AbmParams, InitialCondition, simulate
    from tipping_lab.rare_events import EscapeConfig, mc_escape

    params = AbmParams(n_agents=n_agents)
    init = InitialCondition.gaussian(0.0, 0.3)
    simulate(params, init, 1.0, seed=0)  # jit warm-up / first-call cost
    t0 = time.perf_counter()
    simulate(params, init, 10.0, seed=1)
    abm_wall = time.perf_counter() - t0

    drift = lambda x: 0.0 * x  # Brownian exit from (-1, 1): mean time 1
    cfg_warm = EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-4,
                            max_steps=10**7, n_trajectories=2, seed=0)
    mc_escape(drift, 1.0, cfg_warm)
    cfg = EscapeConfig(a=-1.0, b=1.0, x0=0.0, h=1e-4,
                       max_steps=10**7, n_trajectories=n_paths, seed=0)
    t0 = time.perf_counter()
    stats = mc_escape(drift, 1.0, cfg)
    esc_wall = time.perf_counter() - t0
    n_steps = stats.samples.sum() / cfg.h

    return {
        "backend": active_backend(),
        "abm_seconds": abm_wall,
        "escape_seconds": esc_wall,
        "escape_steps_per_second": n_steps / esc_wall,
        "escape_mean": stats.mean,
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--agents", type=int, default=20000)
    parser.add_argument("--paths", type=int, default=2000)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        print(json.dumps(_measure(args.agents, args.paths)))
        return

    results = []
    for backend in ("numba", "numpy"):
        env = dict(os.environ, TIPPING_LAB_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker",
             "--agents", str(args.agents), "--paths", str(args.paths)],
            env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            raise SystemExit(proc.returncode)
        results.append(json.loads(proc.stdout.strip().splitlines()[-1]))

    print("%-8s %14s %18s %22s"
          % ("backend", "abm 10u (s)",
             "escape %dp (s)" % args.paths, "escape steps/s"))
    for r in results:
        print("%-8s %14.3f %18.3f %22.3e"
              % (r["backend"], r["abm_seconds"], r["escape_seconds"],
                 r["escape_steps_per_second"]))
    base, fallback = results
    print("\nnumba speedup: abm %.1fx, escape %.1fx"
          % (fallback["abm_seconds"] / base["abm_seconds"],
             fallback["escape_seconds"] / base["escape_seconds"]))
    if abs(base["escape_mean"] - fallback["escape_mean"]) > 1e-12:
        print("WARNING: backends disagree on the escape mean")


if __name__ == "__main__":
    main()
