"""Time the compiled and NumPy kernel backends on the package's hot loops.

Usage::

    python benchmarks/bench_kernels.py [--events 20000] [--trajectories 2000] [--repeat 3]

Prints one line per (kernel, backend) with the best wall time and the
speed-up of the compiled backend; results are checked to agree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from tsvfsim import boseeinstein as be
from tsvfsim import kernels
from tsvfsim import pilotwave as pw


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=20000)
    ap.add_argument("--trajectories", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    s = be.sample_events(be.SourceModel(), args.events, 1)
    field = pw.HBTModel().joint_field()
    starts = pw.sample_density(field, args.trajectories, 0.0, 1)
    cases = {
        "be_same": lambda impl: impl.be_same(s.p, s.x, s.origin, 0, args.events, 0, True, 0.0, 0.4, 40),
        "be_mixed": lambda impl: impl.be_mixed(s.p, s.origin, 0, args.events, 10, 0, 0.0, 0.4, 40),
        "rk4_packets": lambda impl: impl.rk4_packets(starts, 0.0, 0.1, 400, *field._args(), 1e-12),
    }
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<12} {'backend':<9} {'seconds':>9} {'speed-up':>9}")
    for name, case in cases.items():
        times, outs = {}, {}
        for bname, impl in kernels.backends().items():
            times[bname], outs[bname] = best_time(lambda: case(impl), args.repeat)
        ref = outs["python"]
        for bname, t in times.items():
            a = ref if isinstance(ref, tuple) else (ref,)
            b = outs[bname] if isinstance(outs[bname], tuple) else (outs[bname],)
            assert all(np.allclose(x, y, rtol=1e-9, atol=1e-9) for x, y in zip(a, b)), (name, bname)
            print(f"{name:<12} {bname:<9} {t:9.3f} {times['python'] / t:9.1f}x")


if __name__ == "__main__":
    main()
