"""Compare the numba-JIT and pure-NumPy kernel backends.

Runs the same seeded workloads in two subprocesses, one per backend
(selected via the WIDEPOSE_NUMBA environment variable), and prints a
timing table plus a result checksum demonstrating that both paths
compute the same numbers.

Usage:
    python benchmarks/backend_bench.py [--scenes 150] [--solves 400]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def run_workload(scenes: int, solves: int) -> dict:
    import numpy as np

    from widepose import backend
    from widepose.geometry import CameraIntrinsics, Pose, project
    from widepose.pnp import Correspondence, RansacParams, pnp_ransac
    from widepose.simulator import run_benchmark

    backend.warmup()
    K = CameraIntrinsics(fx=214.8, fy=214.8, cx=256.0, cy=256.0)

    t0 = time.perf_counter()
    checksum = 0.0
    for trial in range(solves):
        rng = np.random.default_rng(np.random.SeedSequence([101, trial]))
        pose = Pose(rng.normal(size=4), [rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                                         rng.uniform(2.0, 5.0)])
        pts = rng.uniform(-0.6, 0.6, size=(30, 3))
        uv = project(K, pose, pts[:20]) + rng.normal(scale=0.5, size=(20, 2))
        corrs = [Correspondence(p, u) for p, u in zip(pts[:20], uv)]
        corrs += [Correspondence(p, rng.uniform(0, 512, size=2)) for p in pts[20:]]
        result = pnp_ransac(corrs, K, RansacParams(rng_seed=trial))
        checksum += float(result.pose.translation.sum()) + result.inlier_count
    ransac_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    bench = run_benchmark(scenes, seed=7)
    bench_s = time.perf_counter() - t0
    checksum += sum(r.adi_error for r in bench.rows if r.success)

    return {
        "backend": backend.backend_name(),
        "ransac_seconds": ransac_s,
        "benchmark_seconds": bench_s,
        "checksum": checksum,
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenes", type=int, default=150,
                        help="scenes for the end-to-end benchmark workload")
    parser.add_argument("--solves", type=int, default=400,
                        help="standalone RANSAC solves")
    parser.add_argument("--run-workload", action="store_true",
                        help=argparse.SUPPRESS)  # subprocess entry
    args = parser.parse_args()

    if args.run_workload:
        print(json.dumps(run_workload(args.scenes, args.solves)))
        return 0

    results = {}
    for flag, label in (("1", "numba"), ("0", "numpy")):
        env = dict(os.environ, WIDEPOSE_NUMBA=flag)
        proc = subprocess.run(
            [sys.executable, __file__, "--run-workload",
             "--scenes", str(args.scenes), "--solves", str(args.solves)],
            env=env, capture_output=True, text=True, check=True)
        results[label] = json.loads(proc.stdout.strip().splitlines()[-1])

    print(f"workload: {args.solves} RANSAC solves (20 inliers + 10 outliers), "
          f"{args.scenes}-scene end-to-end benchmark")
    print(f"{'backend':8s} {'ransac':>10s} {'benchmark':>10s} {'checksum':>22s}")
    for label, r in results.items():
        print(f"{label:8s} {r['ransac_seconds']:9.2f}s {r['benchmark_seconds']:9.2f}s "
              f"{r['checksum']:22.9f}")
    speed_r = results["numpy"]["ransac_seconds"] / results["numba"]["ransac_seconds"]
    speed_b = results["numpy"]["benchmark_seconds"] / results["numba"]["benchmark_seconds"]
    agree = abs(results["numpy"]["checksum"] - results["numba"]["checksum"]) \
        / max(1.0, abs(results["numba"]["checksum"]))
    print(f"numba speedup: ransac {speed_r:.1f}x, benchmark {speed_b:.1f}x; "
          f"checksum relative difference {agree:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
