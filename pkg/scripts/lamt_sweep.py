"""LaMT sampling study: how far the 10 Hz crossing time sits from a densely sampled one.

Random lane changes toward a straight boundary are sampled at 10 Hz and at a
dense rate; the script reports the lag distribution and per-call runtime.

    python scripts/lamt_sweep.py --n 2000 --dense-hz 1000
"""

import argparse
import time

import numpy as np

from espkit import geometry as geo
from espkit.synth import lane_change_future
from espkit.token_model import BoundingBox2D, FrameState

LANE_W = 3.75


def dense(traj_fn, hz):
    n = 5 * hz
    return [traj_fn(k / hz) for k in range(1, n + 1)]


def main(n: int, dense_hz: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    boundary = np.array([(-200.0, 0.5 * LANE_W), (800.0, 0.5 * LANE_W)])
    lags, misses, cost = [], 0, 0.0
    for _ in range(n):
        box = BoundingBox2D(rng.uniform(3.5, 12.0), rng.uniform(1.6, 2.6))
        start, dur, speed = rng.uniform(0, 4.0), rng.uniform(1.0, 4.0), rng.uniform(5, 35)
        coarse = lane_change_future(0.0, LANE_W, start, dur, speed)
        t0 = time.perf_counter()
        tc = geo.lamt(coarse, box, boundary)
        cost += time.perf_counter() - t0
        # resample the same manoeuvre on a fine grid via linear interpolation in time
        ts = np.array([f.t for f in coarse])
        xs, ys, hs = (np.array([getattr(f, a) for f in coarse]) for a in ("x", "y", "heading"))

        def at(t):
            return FrameState(t, float(np.interp(t, ts, xs)), float(np.interp(t, ts, ys)), float(np.interp(t, ts, hs)), speed)

        fine = [f for f in dense(at, dense_hz) if f.t >= ts[0]]
        tf = geo.lamt(fine, box, boundary)
        if (tc is None) != (tf is None):
            misses += 1
        elif tc is not None:
            lags.append(tc - tf)
    lags = np.array(lags)
    print(f"scenes {n}, crossing {lags.size}, presence mismatches {misses}")
    if lags.size:
        print(f"lag (s): min {lags.min():.4f} median {np.median(lags):.4f} max {lags.max():.4f}")
        print(f"within 0.1 s: {np.mean(np.abs(lags) <= 0.1 + 1e-9):.4f}")
    print(f"lamt runtime: {cost / n * 1e3:.3f} ms per call")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--dense-hz", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    main(a.n, a.dense_hz, a.seed)
