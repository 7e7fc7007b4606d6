#!/usr/bin/env python3
"""Voting-throughput benchmark: random events into a W x H x Nz volume.

Reports events/s for each (mode, kernel, workers) combination.
"""

import argparse
import time

import numpy as np

from raysweep._sweep import HAVE_NUMBA
from raysweep.dsi import DsiGrid, vote_events
from raysweep.events import EventStream
from raysweep.geometry import CameraModel, PoseTrajectory, Se3


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--events", type=int, default=400_000)
    ap.add_argument("--width", type=int, default=240)
    ap.add_argument("--height", type=int, default=180)
    ap.add_argument("--planes", type=int, default=100)
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(42)
    cam = CameraModel(fx=200.0, fy=200.0, cx=args.width / 2, cy=args.height / 2,
                      width=args.width, height=args.height,
                      dist=np.array([-0.03, 0.01, 0.001, -0.001]))
    n = args.events
    stream = EventStream(
        "bench", np.sort(rng.uniform(0.0, 1.0, n)),
        rng.integers(0, args.width, n, dtype=np.int32),
        rng.integers(0, args.height, n, dtype=np.int32),
        rng.choice(np.array([-1, 1], np.int8), n),
    )
    traj = PoseTrajectory(np.array([0.0, 1.0]), np.tile([0, 0, 0, 1.0], (2, 1)),
                          np.array([[-0.25, 0, 0], [0.25, 0, 0]]))

    kernels = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    print(f"{n} events -> {args.width}x{args.height}x{args.planes} volume")
    for kernel in kernels:
        for mode in ("nearest", "bilinear"):
            base_rate = None
            for workers in args.workers:
                best = 0.0
                for _ in range(args.repeats):
                    grid = DsiGrid.create(Se3.identity(), cam, 0.45, 4.0, args.planes)
                    t0 = time.perf_counter()
                    vote_events(grid, stream, cam, traj=traj, mode=mode,
                                kernel=kernel, workers=workers)
                    best = max(best, n / (time.perf_counter() - t0))
                scale = "" if base_rate is None else f"  ({best / base_rate:.2f}x)"
                base_rate = base_rate or best
                print(f"  {kernel:6s} {mode:8s} workers={workers}: "
                      f"{best / 1e6:6.2f} Mev/s{scale}")


if __name__ == "__main__":
    main()
