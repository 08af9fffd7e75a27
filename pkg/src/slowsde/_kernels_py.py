"""NumPy stepping kernels (fallback backend).

The expressions mirror the compiled kernel operation for operation, so both
backends produce bit-identical paths for polynomial drifts.
"""

from __future__ import annotations

import numpy as np


def em_poly(out, dw, coefs, cdt, cns, d, trunc, t0, dt):
    """Euler-Maruyama steps with per-step polynomial drift coefficients.

    out: (B, K+1) with out[:, 0] prefilled; dw: (B, K); coefs: (K, nx) where
    coefs[k, i] multiplies x**i at step k.  Paths freeze at the last
    in-domain value once |x| would exceed d; trunc[b] records that time.
    """
    B, K = dw.shape
    nx = coefs.shape[1]
    x = out[:, 0].copy()
    alive = np.ones(B, dtype=bool)
    for k in range(K):
        c = coefs[k]
        f = np.full(B, c[nx - 1])
        for i in range(nx - 2, -1, -1):
            f = f * x + c[i]
        xn = (x + cdt * f) + cns * dw[:, k]
        exited = alive & (np.abs(xn) > d)
        if exited.any():
            trunc[exited] = t0 + (k + 1) * dt
            alive &= ~exited
        x = np.where(alive, xn, x)
        out[:, k + 1] = x
    return None


def em_callable(out, dw, drift, t_nodes, cdt, cns, d, trunc, t0, dt):
    """Euler-Maruyama steps for an arbitrary vectorized drift callable."""
    B, K = dw.shape
    x = out[:, 0].copy()
    alive = np.ones(B, dtype=bool)
    for k in range(K):
        f = np.asarray(drift(x, t_nodes[k]), dtype=float)
        if f.ndim == 0:
            f = np.full(B, float(f))
        xn = (x + cdt * f) + cns * dw[:, k]
        exited = alive & (np.abs(xn) > d)
        if exited.any():
            trunc[exited] = t0 + (k + 1) * dt
            alive &= ~exited
        x = np.where(alive, xn, x)
        out[:, k + 1] = x
    return None


def linear_paths(out, dw, mult, cns, d, trunc, t0, dt):
    """Exponential-Euler steps x <- x * mult[k] + cns * dW_k.

    mult[k] = exp(a(t_k) dt / eps) is precomputed by the caller so both
    backends consume identical multipliers.
    """
    B, K = dw.shape
    x = out[:, 0].copy()
    alive = np.ones(B, dtype=bool)
    for k in range(K):
        xn = x * mult[k] + cns * dw[:, k]
        exited = alive & (np.abs(xn) > d)
        if exited.any():
            trunc[exited] = t0 + (k + 1) * dt
            alive &= ~exited
        x = np.where(alive, xn, x)
        out[:, k + 1] = x
    return None
