"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on shapes taken from the desk pipeline; outputs of the two
backends are checked for equality before timing. The last section times
one forward/backward step of the desk network in a child process per
backend (``HCPNET_PURE_PYTHON`` selects the fallback).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hcpnet import _pykernels as py

try:
    from hcpnet import _ckernels as cy
except ImportError:
    sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")


def cases(rng):
    x = rng.normal(size=(32, 8, 66, 66)).astype(np.float32)  # padded first conv input
    cols = py.im2col(x, 3, 3, 1)
    pool_in = rng.normal(size=(32, 8, 64, 64)).astype(np.float32)
    out, idx = py.maxpool_forward(pool_in, 2, 2)
    boxes = np.column_stack([rng.integers(0, 150, (200, 2)), rng.integers(16, 120, (200, 2))]).astype(np.int64)
    a = rng.random((60, 60))
    sym = np.ascontiguousarray((a + a.T) / 2)
    return [
        ("im2col 32x8x66x66 k3", lambda m: m.im2col(x, 3, 3, 1)),
        ("col2im 32x8x66x66 k3", lambda m: m.col2im(cols, 32, 8, 66, 66, 3, 3, 1)),
        ("maxpool fwd 32x8x64x64", lambda m: m.maxpool_forward(pool_in, 2, 2)),
        ("maxpool bwd 32x8x64x64", lambda m: m.maxpool_backward(out, idx, 64, 64)),
        ("pairwise IoU 200 boxes", lambda m: m.pairwise_iou(boxes)),
        ("Jacobi eigh 60x60", lambda m: m.jacobi_eigh(sym, 1e-12, 100)),
        ("NMS 200 boxes @0.8", lambda m: m.nms_sorted(boxes, 0.8, 0)),
    ]


def same(a, b):
    if isinstance(a, tuple):
        return all(same(u, v) for u, v in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype.kind == "f":
        return a.shape == b.shape and np.allclose(a, b, rtol=1e-9, atol=1e-9)
    return np.array_equal(a, b)


STEP = """
import time, numpy as np
from hcpnet import kernels, model as M
from hcpnet.nn import functional as F
rng = np.random.default_rng(0)
net = M.build_shared_cnn(10, rng)
x = M.to_input(rng.integers(0, 256, (32, 64, 64, 3)), np.full(3, 128.0))
y = rng.integers(0, 2, (32, 10)); y[:, 0] = 1
best = 1e9
for _ in range({repeat}):
    t = time.perf_counter()
    net.zero_grad(); p = net.forward(x, train=True, rng=rng); net.backward(F.squared_loss(p, y)[1])
    best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, best)
"""


def network_step(pure, repeat):
    env = dict(os.environ, HCPNET_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run(
        [sys.executable, "-c", STEP.format(repeat=repeat)], env=env, capture_output=True, text=True, check=True
    ).stdout.split()
    return out[0], float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng):
        if not same(fn(cy), fn(py)):
            sys.exit(f"{name}: backends disagree")
        tc = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        tp = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:28s} {tc:10.2f} {tp:10.2f} {tp / tc:7.1f}x")
    (bc, tc), (bp, tp) = network_step(False, args.repeat), network_step(True, args.repeat)
    print(f"{'desk net fwd+bwd, batch 32':28s} {tc * 1e3:10.2f} {tp * 1e3:10.2f} {tp / tc:7.1f}x  ({bc} vs {bp})")


if __name__ == "__main__":
    main()
