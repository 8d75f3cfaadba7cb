"""Time the slot recursion on each available backend.

    python3 benchmarks/bench_kernels.py [--seconds 10] [--repeat 3]
"""

import argparse
import time

import numpy as np

from tdm_afe.engine import lpf_coefficients
from tdm_afe.kernels import backends
from tdm_afe.model import AfeParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=10.0, help="simulated time")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    p = AfeParams()
    n = int(args.seconds * p.f_m) // 4 * 4
    rng = np.random.default_rng(0)
    v = 1e-3 * rng.standard_normal(n)
    chop = np.where((np.arange(n) // 4) % 2 == 0, 1, -1).astype(np.int8)
    b0, b1, a1 = lpf_coefficients(p)
    call = (100.0, 0.0036, 0.2865, p.vdd / 2, b0, b1, a1, 4)

    times = {}
    outs = {}
    for name, fn in backends().items():
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            outs[name] = fn(v, chop, *call)
            best = min(best, time.perf_counter() - t0)
        times[name] = best
        print(f"{name:8s} {n:>10d} slots  {best * 1e3:9.1f} ms  {n / best / 1e6:7.2f} Mslot/s")
    if len(outs) == 2:
        diff = np.max(np.abs(outs["cython"][0] - outs["python"][0]))
        print(f"speedup  {times['python'] / times['cython']:.1f}x   max |diff| {diff:.3g} V")


if __name__ == "__main__":
    main()
