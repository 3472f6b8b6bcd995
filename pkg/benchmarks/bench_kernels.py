"""Time the numba and numpy kernel backends on the same workloads.

    python3 benchmarks/bench_kernels.py [--N 1000] [--repeat 3] [--json out.json]

Each workload runs once untimed per backend (numba compiles then), then
``--repeat`` times; the best wall time is reported.
"""

import argparse
import json
import time

import numpy as np

from fracminimax import fixtures as fx
from fracminimax._backend import HAVE_NUMBA, use_backend
from fracminimax.dynamics import integrate_policies, policy_alphabet
from fracminimax.fraccalc import Grid, rl_integral, sample_function
from fracminimax.pathspace import dist, modulus_of_continuity, restrict


def workloads(N):
    rng = np.random.default_rng(0)
    g = Grid(1.0, N)
    psi = sample_function(g, lambda t: np.stack([np.sin(3 * t), np.cos(t)], axis=1))
    x = restrict(fx.random_ac_path(rng, g, 2, 0.5), N)
    y = restrict(fx.random_ac_path(rng, g, 2, 0.5), N // 2)
    P = fx.build("nonlinear", N=N // 4)
    p = fx.random_point(rng, P, t_index=N // 40)
    letters = policy_alphabet(P, 3)
    pols = rng.integers(0, len(letters), size=(256, 4))
    return {
        "rl_integral": lambda: rl_integral(psi, 0.4),
        "pece_batch (256 policies)": lambda: integrate_policies(P, p, [1.0], letters, pols),
        "dist": lambda: dist(x, y),
        "dist (segments)": lambda: dist(x, y, refine=True),
        "modulus": lambda: modulus_of_continuity(x, 0.25),
    }


def best_time(fn, repeat):
    fn()
    out = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out = min(out, time.perf_counter() - t)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    rows = {}
    for name, fn in workloads(args.N).items():
        rows[name] = {}
        for b in backends:
            prev = use_backend(b)
            try:
                rows[name][b] = best_time(fn, args.repeat)
            finally:
                use_backend(prev)
    print(f"{'workload':28s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, t in rows.items():
        line = f"{name:28s}" + "".join(f"{t[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) > 1:
            line += f"{t['numpy'] / t['numba']:11.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"N": args.N, "seconds": rows}, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
