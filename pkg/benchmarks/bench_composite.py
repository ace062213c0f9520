"""Compare the compiled and numpy compositing backends.

    python3 benchmarks/bench_composite.py [--size 64] [--gaussians 8192] [--repeat 5]

Both backends are timed on the same projected scene, forward and backward,
and their outputs are compared.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from efree.gaussians import GaussianSet
from efree.geometry import CameraView, intrinsics
from efree import rasterizer
from efree.rasterizer.core import default_threads
from efree.tensorcore import Tensor, precision


def make_scene(rng, m: int, size: int):
    f = size * 0.9
    cam = CameraView(intrinsics(f, f, size / 2, size / 2), np.eye(4), size, size, 0.1, 10.0)
    means = np.c_[rng.uniform(-1, 1, (m, 2)), rng.uniform(1.5, 4.0, m)]
    q = rng.normal(size=(m, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    scales = rng.uniform(0.01, 0.05, (m, 3))
    arrays = (means, q, scales, rng.uniform(0.3, 0.95, m), rng.normal(0, 0.5, (m, 3, 4)))
    return arrays, cam


def time_backend(name, arrays, cam, repeat, threads):
    rasterizer.set_backend(name)
    fwd, bwd = [], []
    for _ in range(repeat):
        ts = [Tensor(a, requires_grad=True) for a in arrays]
        t0 = time.perf_counter()
        img, _, _ = rasterizer.rasterize(GaussianSet(*ts), cam, threads=threads)
        t1 = time.perf_counter()
        img.sum().backward()
        t2 = time.perf_counter()
        fwd.append(t1 - t0)
        bwd.append(t2 - t1)
    return img.data, ts[0].grad, float(np.median(fwd)), float(np.median(bwd))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--gaussians", type=int, default=8192)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    threads = args.threads or default_threads()
    rng = np.random.default_rng(0)
    arrays, cam = make_scene(rng, args.gaussians, args.size)
    original = rasterizer.get_backend()
    try:
        with precision(np.float64):
            results = {}
            for name in ("python", "compiled"):
                try:
                    results[name] = time_backend(name, arrays, cam, args.repeat, threads)
                except ImportError:
                    print(f"{name:9s} unavailable")
    finally:
        rasterizer.set_backend(original)
    print(f"{args.gaussians} Gaussians, {args.size}x{args.size}, {threads} thread(s), median of {args.repeat}")
    for name, (_, _, f, b) in results.items():
        print(f"{name:9s} forward {f * 1e3:8.2f} ms   backward {b * 1e3:8.2f} ms")
    if len(results) == 2:
        (ip, gp, fp, bp), (ic, gc, fc, bc) = results["python"], results["compiled"]
        print(f"speedup   forward {fp / fc:6.1f}x       backward {bp / bc:6.1f}x")
        print(f"max |image diff| {np.abs(ip - ic).max():.2e}   max |grad diff| {np.abs(gp - gc).max():.2e}")


if __name__ == "__main__":
    main()
