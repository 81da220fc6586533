"""Time the compiled kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--reps 512] [--repeat 3]

Both backends run the same models with the same seed; the script also
checks that their trajectories agree bit for bit.
"""
import argparse
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from dynograph import _backend
from dynograph.dsl import parse_model
from dynograph.simulate import SimConfig, simulate

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "dynograph" / "fixtures"

CASES = [
    ("ou", "ou.dym", 1e-3, 1.0),
    ("bivariate", "bivariate.dym", 1e-2, 5.0),
    ("hiv_mechanistic", "hiv_mechanistic.dym", 1e-2, 20.0),
]


def timed(spec, cfg, backend, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = simulate(spec, cfg, backend=backend)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    if "compiled" not in _backend.KERNELS:
        print("compiled kernel not built; only the fallback is available", file=sys.stderr)
        return 1
    print(f"{'model':<16} {'steps':>7} {'compiled s':>11} {'python s':>9} {'speedup':>8}  same")
    for name, fname, dt, horizon in CASES:
        spec = parse_model((FIXTURES / fname).read_text())
        cfg = SimConfig(dt, horizon, args.reps, master_seed=1, threads=args.threads)
        fast, a = timed(spec, cfg, "compiled", args.repeat)
        slow, b = timed(spec, cfg, "python", args.repeat)
        same = np.array_equal(a.states, b.states)
        print(f"{name:<16} {cfg.steps:>7} {fast:>11.3f} {slow:>9.3f} {slow / fast:>7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
