"""SDE integration: Euler-Maruyama for the nonlinear equation, exponential
Euler for linear comparisons, and coupled pairs sharing one noise realization.

The hot stepping loops live in a compiled extension when available, with a
NumPy fallback selected at import (override with SLOWSDE_BACKEND=python).
Both backends consume the same precomputed increments, step coefficients and
multipliers, and produce bit-identical paths for polynomial drifts.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels_py
from .errors import StepTooLarge
from .model import ModelSpec
from .noise import NoiseStream

__all__ = [
    "BACKEND", "PathSample", "simulate", "simulate_linear", "simulate_coupled",
    "em_batch", "linear_batch", "time_grid", "n_steps_for",
    "dump_binary", "load_binary",
]

if os.environ.get("SLOWSDE_BACKEND", "").lower() == "python":
    _kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        _kernels = _kernels_py
        BACKEND = "python"


def backend() -> str:
    """Name of the stepping backend selected at import."""
    return BACKEND


@dataclass(frozen=True)
class PathSample:
    """One discretized trajectory with the noise identity that reproduces it."""

    t_grid: np.ndarray
    x_values: np.ndarray
    eps: float
    sigma: float
    master_seed: int
    path_index: int
    scheme: str
    truncated_at: Optional[float] = None
    mirrored: bool = False
    level: int = 0

    @property
    def dt(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    def value_at(self, t: float) -> float:
        k = int(round((t - self.t_grid[0]) / self.dt))
        if not 0 <= k < len(self.t_grid) or abs(self.t_grid[k] - t) > 1e-9 + 1e-9 * abs(t):
            raise ValueError(f"t={t!r} is not a grid node")
        return float(self.x_values[k])

    def to_csv(self, path) -> None:
        header = (f"# scheme={self.scheme} eps={self.eps!r} sigma={self.sigma!r} "
                  f"seed={self.master_seed} index={self.path_index}\n"
                  "t,x\n")
        with open(path, "w") as fh:
            fh.write(header)
            for t, x in zip(self.t_grid, self.x_values):
                fh.write(f"{t:.17g},{x:.17g}\n")


def n_steps_for(t0: float, t_end: float, dt: float) -> int:
    span = t_end - t0
    if span <= 0 or dt <= 0:
        raise ValueError("need t_end > t0 and dt > 0")
    return int(math.ceil(span / dt - 1e-9))


def time_grid(t0: float, dt: float, n_steps: int) -> np.ndarray:
    return t0 + dt * np.arange(n_steps + 1)


def _check_dt(dt: float, eps: float) -> None:
    if dt > eps / 10.0 * (1.0 + 1e-12):
        raise StepTooLarge(f"dt={dt:g} exceeds eps/10={eps / 10.0:g}")


def em_batch(model: ModelSpec, eps: float, sigma: float, t0: float,
             x0, dt: float, increments: np.ndarray) -> tuple:
    """Integrate a batch of Euler-Maruyama paths sharing one grid.

    increments has shape (B, K); x0 is a scalar or a (B,) array.  Returns
    (paths (B, K+1), trunc (B,) with NaN where the path stayed in |x| <= d).
    With sigma = 0 this is explicit Euler on the slow ODE, bit for bit.
    """
    _check_dt(dt, eps)
    B, K = increments.shape
    out = np.empty((B, K + 1))
    out[:, 0] = x0
    trunc = np.full(B, np.nan)
    cdt = dt / eps
    cns = sigma / math.sqrt(eps)
    if model.poly is not None:
        t_nodes = time_grid(t0, dt, K)[:-1]
        coefs = model.poly.coeff_table(t_nodes)
        _kernels.em_poly(out, increments, coefs, cdt, cns, model.d,
                         trunc, t0, dt)
    else:
        t_nodes = time_grid(t0, dt, K)[:-1]
        _kernels_py.em_callable(out, increments, model.drift, t_nodes,
                                cdt, cns, model.d, trunc, t0, dt)
    return out, trunc


def linear_batch(rate_fn: Callable, eps: float, sigma: float, t0: float,
                 x0, dt: float, increments: np.ndarray,
                 domain: float = math.inf) -> tuple:
    """Exponential-Euler batch for the linear equation with rate a(t).

    The per-step multipliers exp(a(t_k) dt / eps) are precomputed here once,
    so both backends see identical values.
    """
    _check_dt(dt, eps)
    B, K = increments.shape
    out = np.empty((B, K + 1))
    out[:, 0] = x0
    trunc = np.full(B, np.nan)
    t_nodes = time_grid(t0, dt, K)[:-1]
    a_vals = np.asarray(rate_fn(t_nodes), dtype=float)
    if a_vals.ndim == 0:
        a_vals = np.full(K, float(a_vals))
    mult = np.ascontiguousarray(np.exp(a_vals * (dt / eps)))
    cns = sigma / math.sqrt(eps)
    _kernels.linear_paths(out, increments, mult, cns, domain, trunc, t0, dt)
    return out, trunc


def _resolve_noise(noise, master_seed, path_index, t0, dt, n):
    if noise is None:
        noise = NoiseStream(master_seed, path_index, t0, dt, n)
    if noise.n_steps != n or abs(noise.dt - dt) > 1e-15 * max(1.0, dt):
        raise ValueError("noise stream grid does not match the requested grid")
    return noise


def simulate(model: ModelSpec, eps: float, sigma: float, t0: float, x0: float,
             t_end: float, dt: float, noise: Optional[NoiseStream] = None,
             master_seed: int = 0, path_index: int = 0) -> PathSample:
    """One Euler-Maruyama path of eps dx = f dt + sigma sqrt(eps) dW (slow time).

    Update rule: x_{k+1} = x_k + (dt/eps) f(x_k, t_k) + (sigma/sqrt(eps)) dW_k.
    Leaving |x| <= d freezes the state at the last in-domain value and records
    the truncation time; it is not an exception.
    """
    n = n_steps_for(t0, t_end, dt)
    noise = _resolve_noise(noise, master_seed, path_index, t0, dt, n)
    dw = noise.increments()[None, :] if sigma != 0.0 else np.zeros((1, n))
    X, trunc = em_batch(model, eps, sigma, t0, x0, dt, np.ascontiguousarray(dw))
    return PathSample(time_grid(t0, dt, n), X[0], eps, sigma,
                      noise.master_seed, noise.path_index, "euler-maruyama",
                      None if math.isnan(trunc[0]) else float(trunc[0]),
                      noise.mirrored, noise.level)


def simulate_linear(rate_fn: Callable, eps: float, sigma: float, t0: float,
                    x0: float, t_end: float, dt: float,
                    noise: Optional[NoiseStream] = None,
                    master_seed: int = 0, path_index: int = 0,
                    domain: float = math.inf) -> PathSample:
    """One exponential-Euler path of the linear SDE with rate a(t).

    x_{k+1} = x_k exp(a(t_k) dt/eps) + (sigma/sqrt(eps)) dW_k: the drift
    response is distribution-exact for frozen coefficients and never blows
    up for a > 0 at moderate dt/eps, while the shared dW keeps paths
    comparable with simulate().
    """
    n = n_steps_for(t0, t_end, dt)
    noise = _resolve_noise(noise, master_seed, path_index, t0, dt, n)
    dw = noise.increments()[None, :] if sigma != 0.0 else np.zeros((1, n))
    X, trunc = linear_batch(rate_fn, eps, sigma, t0, x0, dt,
                            np.ascontiguousarray(dw), domain)
    return PathSample(time_grid(t0, dt, n), X[0], eps, sigma,
                      noise.master_seed, noise.path_index, "exponential-euler",
                      None if math.isnan(trunc[0]) else float(trunc[0]),
                      noise.mirrored, noise.level)


def simulate_coupled(model: ModelSpec, rate_fn: Callable, eps: float,
                     sigma: float, start: tuple, t_end: float, dt: float,
                     noise: Optional[NoiseStream] = None,
                     master_seed: int = 0, path_index: int = 0) -> tuple:
    """Nonlinear and linear paths driven by the identical increment sequence.

    Both start from the same (x0, t0); used for pathwise comparison tests
    where the nonlinear path must dominate the linear one until it exits
    the wedge or the linear path returns to zero.
    """
    x0, t0 = start
    n = n_steps_for(t0, t_end, dt)
    noise = _resolve_noise(noise, master_seed, path_index, t0, dt, n)
    dw = np.ascontiguousarray(noise.increments()[None, :]) if sigma != 0.0 \
        else np.zeros((1, n))
    Xn, tr_n = em_batch(model, eps, sigma, t0, x0, dt, dw)
    Xl, tr_l = linear_batch(rate_fn, eps, sigma, t0, x0, dt, dw)
    grid = time_grid(t0, dt, n)
    p_nl = PathSample(grid, Xn[0], eps, sigma, noise.master_seed,
                      noise.path_index, "euler-maruyama",
                      None if math.isnan(tr_n[0]) else float(tr_n[0]),
                      noise.mirrored, noise.level)
    p_lin = PathSample(grid, Xl[0], eps, sigma, noise.master_seed,
                       noise.path_index, "exponential-euler",
                       None if math.isnan(tr_l[0]) else float(tr_l[0]),
                       noise.mirrored, noise.level)
    return p_nl, p_lin


_BIN_MAGIC = b"SLSDEP1\x00"


def dump_binary(path, sample: PathSample) -> None:
    """Little-endian float64 dump with a (seed, index, t0, dt, n) header."""
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<QQddQ", sample.master_seed, sample.path_index,
                             sample.t_grid[0], sample.dt, len(sample.x_values)))
        fh.write(sample.x_values.astype("<f8").tobytes())


def load_binary(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _BIN_MAGIC:
            raise ValueError("not a slowsde path dump")
        seed, index, t0, dt, n = struct.unpack("<QQddQ", fh.read(40))
        x = np.frombuffer(fh.read(8 * n), dtype="<f8")
    return {"master_seed": seed, "path_index": index, "t0": t0, "dt": dt,
            "x_values": x}
