"""Compare the compiled and numpy convolution kernels on the model's layer shapes.

    python benchmarks/bench_kernels.py [--repeat N]

Also times one full forward/backward training step with each backend.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from sstage.autodiff import _pykernels, kernels
from sstage.data import T_IN, T_OUT
from sstage.gradsuite import gradient_scene
from sstage.losses import total_loss
from sstage.model import STAGE, ModelConfig

try:
    from sstage.autodiff import _ckernels
except ImportError:  # extension not built
    _ckernels = None

# (name, x shape, weight shape, padding) for K=4 agents, M=5 modes
SHAPES = [
    ("tconv 3x1", (1, 2, T_IN, 4), (2, 2, 3, 1), (1, 0)),
    ("conv 1x1", (1, 2, T_IN, 4), (2, 2, 1, 1), (0, 0)),
    ("traj conv1 3x3", (1, T_IN, 2, 4), (T_IN, 5 * T_OUT, 3, 3), (1, 1)),
    ("traj conv2 3x3", (1, 5 * T_OUT, 2, 4), (5 * T_OUT, 5 * T_OUT, 3, 3), (1, 1)),
    ("prob conv 3x3", (1, 2 * T_IN, 1, 4), (2 * T_IN, 5, 3, 3), (1, 1)),
]


def bench_kernel(impl, x, w, b, pad, repeat):
    gy = np.ones_like(impl.conv2d_forward(x, w, b, *pad))
    fwd = min(timeit.repeat(lambda: impl.conv2d_forward(x, w, b, *pad), number=20, repeat=repeat)) / 20
    bwd = min(timeit.repeat(lambda: impl.conv2d_backward(gy, x, w, *pad), number=20, repeat=repeat)) / 20
    return fwd, bwd


def bench_step(impl, repeat):
    saved = kernels._impl
    kernels._impl = impl
    try:
        scene = gradient_scene(0, agents=4)
        model = STAGE(ModelConfig(modes=5, dropout_rate=0.0), seed=0)

        def step():
            model.zero_grad()
            total_loss(model(scene), scene).total.backward()

        return min(timeit.repeat(step, number=10, repeat=repeat)) / 10
    finally:
        kernels._impl = saved


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = [("numpy", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled extension not built; timing the numpy kernels only")
    rng = np.random.default_rng(0)
    print(f"{'layer':<16}" + "".join(f"{n + ' fwd':>14}{n + ' bwd':>14}" for n, _ in impls) + "  (microseconds)")
    for name, xs, ws, pad in SHAPES:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        b = rng.standard_normal(ws[1]).astype(np.float32)
        cells = []
        for _, impl in impls:
            f, bw = bench_kernel(impl, x, w, b, pad, args.repeat)
            cells += [f"{f * 1e6:14.1f}", f"{bw * 1e6:14.1f}"]
        print(f"{name:<16}" + "".join(cells))
    for n, impl in impls:
        print(f"training step (K=4, M=5), {n}: {bench_step(impl, args.repeat) * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
