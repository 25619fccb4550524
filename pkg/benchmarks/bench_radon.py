"""Benchmark the compiled Radon kernel against the pure-numpy fallback.

Run:  python benchmarks/bench_radon.py
"""
import time

import numpy as np

from hydra_ct import _radon_numpy
from hydra_ct.radon import make_operator

try:
    from hydra_ct import _radon_core
except ImportError:
    _radon_core = None


def bench(kernel, op, img, sino, repeats=5):
    out_s = np.zeros(op.sino_shape)
    out_i = np.zeros((op.image_size, op.image_size))
    t0 = time.perf_counter()
    for _ in range(repeats):
        kernel.forward(img, op._cos, op._sin, op._offsets, op._taus, out_s)
    t_fwd = (time.perf_counter() - t0) / repeats
    t0 = time.perf_counter()
    for _ in range(repeats):
        out_i[:] = 0.0
        kernel.adjoint(sino, op._cos, op._sin, op._offsets, op._taus, out_i)
    t_adj = (time.perf_counter() - t0) / repeats
    return t_fwd, t_adj, out_s


def main():
    rng = np.random.default_rng(0)
    print(f"{'size':>6} {'angles':>6} {'numpy fwd':>11} {'numpy adj':>11} "
          f"{'cython fwd':>11} {'cython adj':>11} {'speedup':>8}")
    for size, n_angles in ((64, 64), (128, 128), (256, 180)):
        op = make_operator(size, n_angles)
        img = np.ascontiguousarray(rng.random((size, size)))
        sino = np.ascontiguousarray(rng.random(op.sino_shape))
        np_fwd, np_adj, ref = bench(_radon_numpy, op, img, sino)
        if _radon_core is None:
            print(f"{size:>6} {n_angles:>6} {np_fwd:>11.4f} {np_adj:>11.4f} "
                  f"{'n/a':>11} {'n/a':>11}")
            continue
        cy_fwd, cy_adj, out = bench(_radon_core, op, img, sino)
        assert np.allclose(ref, out, atol=1e-10), "backend results diverge"
        speedup = (np_fwd + np_adj) / (cy_fwd + cy_adj)
        print(f"{size:>6} {n_angles:>6} {np_fwd:>11.4f} {np_adj:>11.4f} "
              f"{cy_fwd:>11.4f} {cy_adj:>11.4f} {speedup:>7.1f}x")


if __name__ == "__main__":
    main()
