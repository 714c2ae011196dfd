"""Time the numba kernels against their numpy twins and check they agree.

    python benchmarks/bench_accel.py [--n 2000] [--r 50] [--repeat 5]
"""

import argparse
import time

import numpy as np

from polykde import _accel
from polykde.polycore import Dims, block_gram, unit_blocks


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--r", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel._HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    dims = Dims.common(2, args.r)
    X = unit_blocks(rng.standard_normal((args.n, dims.ambient)), dims)
    G = np.ascontiguousarray(block_gram(dims, X))
    inv_h2 = np.full(dims.r, 1.0 / 0.3**2)
    labels = rng.integers(0, 2, args.n).astype(np.int64)

    cases = []
    for fam, name in ((_accel.VMF, "vmf"), (_accel.SFP, "sfp100 spherical")):
        prod = fam == _accel.VMF
        cases.append((f"log_kernel_matrix[{name}]",
                      lambda f=fam, p=prod: _accel.np_log_kernel_matrix(G, inv_h2, f, 100.0, p),
                      lambda f=fam, p=prod: _accel.nb_log_kernel_matrix(G, inv_h2, f, 100.0, p)))
    L = _accel.np_log_kernel_matrix(G, inv_h2, _accel.VMF, 0.0, True)
    cases.append(("row_logsumexp", lambda: _accel.np_row_logsumexp(L), lambda: _accel.nb_row_logsumexp(L)))
    cases.append(("group_logsumexp", lambda: _accel.np_group_logsumexp(L, labels, 2),
                  lambda: _accel.nb_group_logsumexp(L, labels, 2)))

    print(f"n={args.n}, dims=(S^2)^{args.r}, threads={_accel.numba.get_num_threads()}")
    print(f"{'kernel':32s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, f_np, f_nb in cases:
        f_nb()  # compile outside the timing
        t_np, a = best_of(f_np, args.repeat)
        t_nb, b = best_of(f_nb, args.repeat)
        fin = np.isfinite(a)
        diff = float(np.max(np.abs(a[fin] - b[fin]))) if fin.any() else 0.0
        print(f"{name:32s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
