"""Compare the compiled and pure-numpy im2col/col2im kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one training step of a small network under each backend.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from slkd import _pykernels, kernels

try:
    from slkd import _ckernels
except ImportError:
    _ckernels = None

SHAPES = [((4, 16, 34, 34), 3, 1), ((4, 32, 34, 34), 3, 2), ((1, 16, 130, 130), 3, 1)]


def bench(mod, x, k, stride, repeat):
    cols = mod.im2col(x, k, k, stride)
    t_fwd = min(timeit.repeat(lambda: mod.im2col(x, k, k, stride), number=5, repeat=repeat)) / 5
    t_bwd = min(timeit.repeat(lambda: mod.col2im(cols, x.shape, k, k, stride), number=5, repeat=repeat)) / 5
    return t_fwd, t_bwd, cols


STEP_SNIPPET = """
import time, numpy as np
from slkd import kernels, autograd as ag
from slkd.autograd import GradTape, backward
from slkd.config import NetConfig
from slkd.net import build_network, forward
m = build_network(NetConfig(levels=3, blocks=(2, 2, 2), base_dim=16), 0)
x = np.random.default_rng(0).random((4, 3, 32, 32), dtype=np.float32)
best = 1e9
for _ in range(REPEAT):
    t0 = time.perf_counter()
    tape = GradTape()
    w = {k: tape.watch(v) for k, v in m.params.items()}
    backward(ag.mean(ag.abs_(ag.sub(forward(m, x, w).reconstruction, x))))
    best = min(best, time.perf_counter() - t0)
print(kernels.BACKEND, best)
"""


def step_time(pure: bool, repeat: int):
    env = dict(os.environ, SLKD_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.replace("REPEAT", str(repeat))],
                         env=env, capture_output=True, text=True, check=True).stdout.split()
    return out[0], float(out[1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"selected backend: {kernels.BACKEND}")
    if _ckernels is None:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'input NCHW':>20s} {'k':>2s} {'s':>2s} | {'numpy fwd':>10s} {'numpy bwd':>10s} | "
          f"{'cython fwd':>10s} {'cython bwd':>10s} | speedup")
    for shape, k, stride in SHAPES:
        x = rng.random(shape, dtype=np.float32)
        pf, pb, pc = bench(_pykernels, x, k, stride, args.repeat)
        row = f"{str(shape):>20s} {k:2d} {stride:2d} | {pf * 1e3:8.2f}ms {pb * 1e3:8.2f}ms |"
        if _ckernels is not None:
            cf, cb, cc = bench(_ckernels, x, k, stride, args.repeat)
            assert np.array_equal(pc, cc), "backends disagree"
            row += f" {cf * 1e3:8.2f}ms {cb * 1e3:8.2f}ms | {(pf + pb) / (cf + cb):5.2f}x"
        print(row)
    print("\nforward+backward, 3-level net, batch 4 x 32x32:")
    for pure in (True, False):
        backend, t = step_time(pure, args.repeat)
        print(f"  {backend:8s} {t * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
