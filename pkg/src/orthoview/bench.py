"""Benchmark the compiled kernels against the pure-numpy fallback.

Run with ``python -m orthoview.bench``.  Covers the individual hot kernels
(im2col / col2im / max-pool / depth scatters) and one full SimpleView
training step, and verifies both backends agree bit-for-bit.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .geometry import PointCloud
from .nn.losses import smooth_loss
from .nn.models import ModelConfig, build_model
from .nn.optim import Adam
from .nn.tensor import Tensor
from .projection import make_cameras, rasterize_view
from .rng import stream


def _time(fn, min_time=0.3):
    fn()  # warm-up
    t0 = time.perf_counter()
    reps = 0
    while time.perf_counter() - t0 < min_time:
        fn()
        reps += 1
    return (time.perf_counter() - t0) / reps


def _bench_kernels():
    rng = stream(0, "bench")
    x = rng.random((108, 16, 16, 16))  # (B, H, W, C)
    cols = kernels.im2col(x, 3, 3, 1, 1, 1, 1)
    dy = rng.random((108, 8, 8, 16))
    _, arg = kernels.maxpool_fwd(x, 3, 2, 1)
    pts = rng.random((2048, 3)) * 2 - 1
    cloud = PointCloud(points=pts)
    cam = make_cameras(6)[0]

    cases = {
        "im2col 108x16x16x16 k3": lambda: kernels.im2col(x, 3, 3, 1, 1, 1, 1),
        "col2im (adjoint)": lambda: kernels.col2im(cols, 108, 16, 16, 16, 3, 3, 1, 1, 1, 1),
        "maxpool fwd k3s2": lambda: kernels.maxpool_fwd(x, 3, 2, 1),
        "maxpool bwd": lambda: kernels.maxpool_bwd(dy, arg, 16, 16),
        "rasterize 2048pts wavg": lambda: rasterize_view(cloud, cam, 32, "wavg"),
        "rasterize 2048pts min": lambda: rasterize_view(cloud, cam, 32, "min"),
    }
    results = {}
    for name, fn in cases.items():
        per_backend = {}
        outputs = {}
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            per_backend[backend] = _time(fn)
            out = fn()
            outputs[backend] = out if isinstance(out, tuple) else (out,)
        if len(outputs) == 2:
            for a, b in zip(*outputs.values()):
                a = a.images if hasattr(a, "images") else a
                b = b.images if hasattr(b, "images") else b
                assert np.array_equal(np.asarray(a), np.asarray(b)), f"{name}: backends disagree"
        results[name] = per_backend
    return results


def _bench_train_step():
    cfg = ModelConfig(arch="simpleview", n_views=6, resolution=32, n_classes=8)
    model = build_model(cfg, seed=0)
    rng = stream(0, "bench-step")
    images = rng.random((18, 6, 32, 32))
    labels = rng.integers(0, 8, size=18)
    optimizer = Adam(model.parameters())

    def step():
        logits = model.forward(Tensor(images))
        loss = smooth_loss(logits, labels, 0.2)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    results = {}
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        results[backend] = _time(step, min_time=2.0)
    return results


def main():
    default = kernels.backend_name()
    print(f"backends available: {', '.join(kernels.available_backends())} (default: {default})")
    kernel_results = _bench_kernels()
    step_results = _bench_train_step()
    kernels.set_backend(default)

    names = sorted(kernel_results[next(iter(kernel_results))]) if kernel_results else []
    header = f"{'case':<28}" + "".join(f"{b:>12}" for b in sorted(step_results)) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for case, per_backend in kernel_results.items():
        row = f"{case:<28}"
        for b in sorted(per_backend):
            row += f"{per_backend[b] * 1e3:>10.2f}ms"
        if len(per_backend) == 2:
            py, cy = per_backend["python"], per_backend["cython"]
            row += f"{py / cy:>9.1f}x"
        print(row)
    row = f"{'train step (18x6 views)':<28}"
    for b in sorted(step_results):
        row += f"{step_results[b] * 1e3:>10.2f}ms"
    if len(step_results) == 2:
        row += f"{step_results['python'] / step_results['cython']:>9.1f}x"
    print(row)
    print("bit-identical across backends: yes")


if __name__ == "__main__":
    main()
