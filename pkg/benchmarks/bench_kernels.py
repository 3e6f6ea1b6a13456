"""Compare the compiled and numpy E-step backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times one full pass (``estep_sums`` over all rows) for a few problem sizes
and prints the median wall time per backend and the speed-up.
"""
import argparse
import time

import numpy as np

from spiderem import kernels
from spiderem.data import synth_gmm
from spiderem.gmm import GaussianMixture, init_params
from spiderem.samplers import split_rng

SIZES = [(5000, 5, 10), (60_000, 12, 20), (20_000, 3, 2), (2000, 20, 50)]


def time_backend(fn, X, idx, theta, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(X, idx, theta.log_weights, theta.wmeans, theta.whiten)
        out.append(time.perf_counter() - t0)
    return float(np.median(out))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    names = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(names)} (default: {kernels.BACKEND})")
    print(f"{'n':>7} {'g':>3} {'d':>3} " + " ".join(f"{k + ' [ms]':>14}" for k in names) + "  speed-up")
    for n, g, d in SIZES:
        X = synth_gmm(g, d, n, 3.0, 0)[0].values
        model = GaussianMixture(X, g)
        theta = init_params(X, g, split_rng(0, 0))
        idx = np.arange(n, dtype=np.intp)
        times = {k: time_backend(kernels.BACKENDS[k], model.X, idx, theta, args.repeat) for k in names}
        ratio = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{n:7d} {g:3d} {d:3d} " + " ".join(f"{1e3 * times[k]:14.2f}" for k in names) + f"  {ratio:8.2f}x")


if __name__ == "__main__":
    main()
