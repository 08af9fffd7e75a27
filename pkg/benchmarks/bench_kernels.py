"""Benchmark the compiled stepping kernel against the NumPy fallback.

Runs the same workload through both backends, reports steps/second and the
maximum absolute difference between the path matrices (expected: exactly 0
for polynomial drifts, by construction).

Usage: python benchmarks/bench_kernels.py [n_paths] [n_steps]
"""

import math
import sys
import time

import numpy as np

from slowsde import standard_pitchfork
from slowsde.noise import fill_increments
from slowsde.sde import time_grid
from slowsde import _kernels_py

try:
    from slowsde import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def run_backend(kernel, dw, coefs, x0, cdt, cns, d, t0, dt):
    B, K = dw.shape
    out = np.empty((B, K + 1))
    out[:, 0] = x0
    trunc = np.full(B, np.nan)
    start = time.perf_counter()
    kernel.em_poly(out, dw, coefs, cdt, cns, d, trunc, t0, dt)
    elapsed = time.perf_counter() - start
    return out, elapsed


def main():
    n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 2048
    n_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 20000
    model = standard_pitchfork()
    eps, sigma, dt, t0 = 0.005, 1e-4, 1e-4, -1.0

    print(f"workload: {n_paths} paths x {n_steps} steps "
          f"({n_paths * n_steps / 1e6:.0f}M steps), standard cubic drift")
    dw = np.empty((n_paths, n_steps))
    t_noise = time.perf_counter()
    fill_increments(dw, 0, range(n_paths), dt)
    print(f"noise generation: {time.perf_counter() - t_noise:.2f}s")

    coefs = model.poly.coeff_table(time_grid(t0, dt, n_steps)[:-1])
    args = (0.0, dt / eps, sigma / math.sqrt(eps), model.d, t0, dt)

    x_py, t_py = run_backend(_kernels_py, dw, coefs, *args)
    rate_py = n_paths * n_steps / t_py
    print(f"python backend:   {t_py:6.2f}s  ({rate_py / 1e6:7.1f}M steps/s)")

    if _kernels_c is None:
        print("compiled backend: not built")
        return
    x_c, t_c = run_backend(_kernels_c, dw, coefs, *args)
    rate_c = n_paths * n_steps / t_c
    print(f"compiled backend: {t_c:6.2f}s  ({rate_c / 1e6:7.1f}M steps/s)")
    print(f"speedup: {t_py / t_c:.1f}x")
    diff = float(np.max(np.abs(x_c - x_py)))
    print(f"max |compiled - python|: {diff:g}"
          + ("  (bit-identical)" if diff == 0.0 else ""))


if __name__ == "__main__":
    main()
