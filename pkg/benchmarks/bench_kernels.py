"""Compare the numba and numpy im2col/col2im kernels, and a full micro train step.

    python3 benchmarks/bench_kernels.py            # kernels, both backends side by side
    LAUD_DISABLE_NUMBA=1 python3 benchmarks/bench_kernels.py --step   # train step on numpy only

Kernel timings call both implementations directly, so one process covers both.
The ``--step`` timing uses whichever backend the env flag selected at import.
"""

import argparse
import time

import numpy as np

from laud import _kernels
from laud.loss import LossConfig
from laud.model import LaudConfig
from laud.trainer import bench, timed

# (batch, channels, size, kernel, stride): 3x3 body convs, the x2 deconv/strided conv, a wide early layer
SHAPES = [
    (4, 32, 16, 3, 1),
    (4, 32, 32, 3, 1),
    (4, 32, 34, 4, 2),
    (1, 67, 64, 3, 1),
]


def kernel_table(iters):
    rng = np.random.default_rng(0)
    print(f"{'shape (b,c,h,k,s)':<24} {'im2col np':>10} {'im2col nb':>10} {'col2im np':>10} {'col2im nb':>10}  (ms)")
    for b, c, h, k, s in SHAPES:
        xp = rng.standard_normal((b, c, h, h))
        ho = (h - k) // s + 1
        cols = _kernels._im2col_numpy(xp, k, k, s, ho, ho)
        row = [timed(lambda: _kernels._im2col_numpy(xp, k, k, s, ho, ho), 2, iters)]
        if _kernels.HAVE_NUMBA:
            row.append(timed(lambda: _kernels._im2col_nb(xp, k, k, s, ho, ho), 2, iters))
            assert np.array_equal(_kernels._im2col_nb(xp, k, k, s, ho, ho), cols)
        else:
            row.append(float("nan"))
        row.append(timed(lambda: _kernels._col2im_numpy(cols, c, h, h, k, k, s, ho, ho), 2, iters))
        if _kernels.HAVE_NUMBA:
            row.append(timed(lambda: _kernels._col2im_nb(cols, c, h, h, k, k, s, ho, ho), 2, iters))
        else:
            row.append(float("nan"))
        print(f"{str((b, c, h, k, s)):<24} " + " ".join(f"{t * 1e3:>10.3f}" for t in row))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--step", action="store_true", help="also time a micro train step with the active backend")
    args = p.parse_args()
    print(f"active backend: {_kernels.backend()}")
    kernel_table(args.iters)
    if args.step:
        cfg = LaudConfig(channels=32, residual_blocks=2, rudp_steps=3)
        t0 = time.perf_counter()
        res = bench(cfg, LossConfig(), batch=4, lr_size=16, warmup=2, iters=5)
        print(f"micro train step: {res['time_per_train_step'] * 1e3:.1f} ms ({time.perf_counter() - t0:.1f}s total)")


if __name__ == "__main__":
    main()
