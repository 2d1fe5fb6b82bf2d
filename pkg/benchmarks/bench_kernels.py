"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--length 20000] [--repeat 3]

Both backends must return identical results; the script checks that before
reporting timings.
"""

import argparse
import time
from fractions import Fraction

import numpy as np

from edgeoffload import (MultiConfig, PolicySolver, SimConfig, apply_metric_map,
                         bucket_trajectory, build_fg, fit_metric_map, reduce_bucket, simulate,
                         simulate_multi, solve_policy, standard_fixture)
from edgeoffload import _kernels


def best_of(fn, repeat):
    times, result = [], None
    for _ in range(repeat):
        t = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t)
    return min(times), result


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels.compiled is None:
        raise SystemExit("compiled kernels are not built; run pip install -e . first")

    data = standard_fixture()
    data = apply_metric_map(data, fit_metric_map(data))
    fg = build_fg(data)
    bucket = reduce_bucket("1/10", 5)
    policy = solve_policy(fg, bucket)
    requests = np.random.default_rng(0).random(args.length * 10) < 0.3
    multi_cfg = MultiConfig(4, Fraction(2, 5), 8, "hierarchical", ("1/5", 4),
                            sequences=1, length=args.length)

    cases = {
        "bucket trajectory": lambda be: bucket_trajectory(requests, bucket, backend=be).tolist(),
        "single-device sim": lambda be: simulate(
            data, policy, SimConfig(1, args.length), backend=be).to_dict(),
        "hierarchical sim": lambda be: simulate_multi(
            data, multi_cfg, PolicySolver(fg, backend=be), backend=be).to_dict(),
        "value iteration": lambda be: solve_policy(
            fg, reduce_bucket("1/20", 5), 0.999, backend=be).to_dict(),
    }
    print(f"{'kernel':<20}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for name, fn in cases.items():
        tp, rp = best_of(lambda: fn("python"), args.repeat)
        tc, rc = best_of(lambda: fn("cython"), args.repeat)
        if rp != rc:
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<20}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
