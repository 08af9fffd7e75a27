"""Ensemble runner: parallel path generation, exit/delay/branch statistics
with Wilson intervals, and empirical-versus-theoretical bound comparisons.

Paths are keyed by index, so reports are byte-identical for any thread
count; aggregation uses only index-ordered writes and commutative merges.
Runtime is kept out of the serialized payload for the same reason.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import envelope as env
from .deterministic import adiabatic_solution, solve_det
from .errors import RegimeViolation, ResourceLimit
from .exits import delay_times_batch, first_exit_batch, sup_deviation_batch
from .model import ModelSpec, branches
from .noise import fill_increments
from .sde import BACKEND, em_batch, n_steps_for, time_grid

__all__ = [
    "EnsembleConfig", "EnsembleReport", "BoundComparison",
    "run_ensemble", "estimate_prob", "compare_bound", "exceedance_curve",
    "serialize_json",
]

PITCHFORK_TAGS = ("before", "escape", "approach", "delay", "branch")
ALL_TAGS = ("stable", "unstable") + PITCHFORK_TAGS

MAX_TOTAL_STEPS = 2_000_000_000


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything that determines an ensemble; the report is a pure function
    of this object (thread count is a run option, not part of it)."""

    model: ModelSpec
    eps: float
    sigma: float
    t0: float
    x0: object  # float or the start rule "x_tilde"
    t_end: float
    dt: float
    n_paths: int
    master_seed: int
    tag: str
    h_list: tuple = ()
    t_probe_list: tuple = ()
    eta: Optional[float] = None
    mirror: bool = False
    tau_window: tuple = (0.15, 0.25)
    bound_c0: float = 1.0
    max_total_steps: int = MAX_TOTAL_STEPS

    def __post_init__(self):
        if self.tag not in ALL_TAGS:
            raise ValueError(f"unknown experiment tag {self.tag!r}")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.dt > self.eps / 10.0 * (1.0 + 1e-12):
            raise ValueError(f"dt={self.dt:g} exceeds eps/10")
        if self.tag in PITCHFORK_TAGS:
            if self.model.kind != "pitchfork":
                raise RegimeViolation(f"tag {self.tag!r} needs a pitchfork model")
            if self.sigma >= math.sqrt(self.eps):
                raise RegimeViolation(
                    f"sigma={self.sigma:g} >= sqrt(eps)={math.sqrt(self.eps):.4g}; "
                    "pitchfork experiments need sigma well below sqrt(eps)")
        if self.tag == "stable" and self.model.kind != "stable-branch":
            raise RegimeViolation("tag 'stable' needs a stable-branch model")
        if self.tag == "unstable" and self.model.kind != "unstable-branch":
            raise RegimeViolation("tag 'unstable' needs an unstable-branch model")
        n_steps = n_steps_for(self.t0, self.t_end, self.dt)
        if self.n_paths * n_steps > self.max_total_steps:
            raise ResourceLimit(
                f"{self.n_paths} paths x {n_steps} steps exceeds the budget "
                f"of {self.max_total_steps} total steps")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "dynamics": {"eps": self.eps, "sigma": self.sigma, "t0": self.t0,
                         "x0": self.x0, "t_end": self.t_end, "dt": self.dt},
            "ensemble": {"n_paths": self.n_paths,
                         "master_seed": self.master_seed,
                         "mirror": self.mirror},
            "experiment": {"tag": self.tag, "h_list": list(self.h_list),
                           "t_probe_list": list(self.t_probe_list),
                           "eta": self.eta, "tau_window": list(self.tau_window),
                           "bound_c0": self.bound_c0},
        }


@dataclass(frozen=True)
class BoundComparison:
    """consistent: the CI lower end does not exceed the bound."""

    verdict: str
    margin: float
    leading_order: bool

    def to_dict(self) -> dict:
        note = ("exceeds leading-order bound" if self.verdict == "violated"
                and self.leading_order else None)
        return {"verdict": self.verdict, "margin": self.margin,
                "leading_order": self.leading_order, "note": note}


@dataclass
class EnsembleReport:
    config: dict
    config_hash: str
    tag: str
    backend: str
    results: dict
    runtime_seconds: float = field(default=0.0, compare=False)
    per_path: dict = field(default_factory=dict, compare=False)

    def payload(self) -> dict:
        return {"schema": "slowsde-report/1", "config": self.config,
                "config_hash": self.config_hash, "tag": self.tag,
                "backend": self.backend, "results": self.results}

    def to_json(self) -> str:
        return serialize_json(self.payload())


def _json_fragments(obj, out: list) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            out.append("null")
        elif math.isinf(x):
            out.append('"inf"' if x > 0 else '"-inf"')
        else:
            out.append(format(x, ".17g"))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)) + ":")
            _json_fragments(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _json_fragments(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def serialize_json(obj) -> str:
    """Canonical JSON: sorted keys, floats at 17 significant digits."""
    out: list = []
    _json_fragments(obj, out)
    return "".join(out)


def config_hash(config: EnsembleConfig) -> str:
    return hashlib.sha256(serialize_json(config.to_dict()).encode()).hexdigest()


def estimate_prob(successes: int, n: int) -> tuple:
    """Wilson 95% score interval (z = 1.96); sane for rare events."""
    if not 0 <= successes <= n or n < 1:
        raise ValueError("need 0 <= successes <= n and n >= 1")
    z = 1.96
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return p, lo, hi


def compare_bound(empirical: tuple, bound_eval) -> BoundComparison:
    """empirical = (p_hat, ci_low, ci_high); violated iff ci_low > bound."""
    _, ci_low, _ = empirical
    bound = bound_eval.bound if hasattr(bound_eval, "bound") else float(bound_eval)
    leading = getattr(bound_eval, "leading_order", True)
    verdict = "consistent" if ci_low <= bound else "violated"
    return BoundComparison(verdict, bound - ci_low, leading)


def _prob_entry(successes: int, n: int, bound_eval=None) -> dict:
    p, lo, hi = estimate_prob(successes, n)
    entry = {"successes": int(successes), "n": int(n), "p_hat": p,
             "ci_low": lo, "ci_high": hi}
    if bound_eval is not None:
        entry["bound"] = bound_eval.to_dict() if hasattr(bound_eval, "to_dict") \
            else float(bound_eval)
        entry["comparison"] = compare_bound((p, lo, hi), bound_eval).to_dict()
    return entry


# ---------------------------------------------------------------------------
# batched path generation


def _batch_size(n_steps: int) -> int:
    return max(16, min(4096, (1 << 24) // max(1, n_steps)))


def _batches(n_paths: int, n_steps: int):
    b = _batch_size(n_steps)
    return [(lo, min(lo + b, n_paths)) for lo in range(0, n_paths, b)]


def _simulate_span(config: EnsembleConfig, lo: int, hi: int, x0: float,
                   n_steps: int) -> tuple:
    dw = np.empty((hi - lo, n_steps))
    fill_increments(dw, config.master_seed, range(lo, hi), config.dt,
                    config.mirror)
    return em_batch(config.model, config.eps, config.sigma, config.t0, x0,
                    config.dt, dw)


def _map_batches(config: EnsembleConfig, x0: float, n_steps: int,
                 per_batch, threads: int) -> None:
    """Run per_batch(lo, hi, X, trunc) over all batches, threaded."""
    spans = _batches(config.n_paths, n_steps)

    def work(span):
        lo, hi = span
        X, trunc = _simulate_span(config, lo, hi, x0, n_steps)
        per_batch(lo, hi, X, trunc)

    if threads <= 1:
        for span in spans:
            work(span)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, spans))


def _resolve_x0(config: EnsembleConfig) -> float:
    if isinstance(config.x0, str):
        if config.x0 != "x_tilde":
            raise ValueError(f"unknown start rule {config.x0!r}")
        curves = branches(config.model)
        return float(curves.x_tilde(config.t0))
    return float(config.x0)


# ---------------------------------------------------------------------------
# per-tag measurements


def _run_stable(config: EnsembleConfig, threads: int) -> dict:
    grid = time_grid(config.t0, config.dt, n_steps_for(config.t0, config.t_end,
                                                       config.dt))
    x0 = _resolve_x0(config)
    xdet = solve_det(config.model, config.eps, config.t0, x0, config.t_end,
                     config.dt, method="euler")
    table = env.zeta_stable(config.model, config.eps, grid, xdet)
    sqrtz = table.sqrt_zeta()
    centre = xdet.x_values
    sups = np.empty(config.n_paths)

    def per_batch(lo, hi, X, trunc):
        sups[lo:hi] = sup_deviation_batch(X, centre, sqrtz)

    _map_batches(config, x0, len(grid) - 1, per_batch, threads)
    series = []
    for h in config.h_list:
        b = env.bound_stable(config.model, config.t_end, config.eps,
                             config.sigma, h, t_start=config.t0)
        series.append({"h": h, **_prob_entry(int(np.sum(sups >= h)),
                                             config.n_paths, b)})
    return {"exceedance": series,
            "zeta_residual": table.ode_residual(),
            "sup_deviation_quantiles": _quantiles(sups)}, {"sup_deviation": sups}


def _run_unstable(config: EnsembleConfig, threads: int) -> dict:
    grid = time_grid(config.t0, config.dt, n_steps_for(config.t0, config.t_end,
                                                       config.dt))
    x0 = _resolve_x0(config)
    xhat = adiabatic_solution(config.model, config.eps, grid)
    abar = np.asarray(config.model.drift_dx(xhat.x_values, grid), dtype=float)
    h = config.h_list[0] if config.h_list else config.sigma / 2.0
    widths = h / np.sqrt(2.0 * abar)
    centre = xhat.x_values
    exit_times = np.empty(config.n_paths)

    def per_batch(lo, hi, X, trunc):
        outside = np.abs(X - centre[None, :]) >= widths[None, :]
        any_exit = outside.any(axis=1)
        first = np.where(any_exit, outside.argmax(axis=1), 0)
        exit_times[lo:hi] = np.where(any_exit, grid[first], np.nan)

    _map_batches(config, x0, len(grid) - 1, per_batch, threads)
    series = []
    for t in config.t_probe_list:
        confined = int(np.sum(~(exit_times < t)))  # NaN = never exited
        b = env.bound_unstable(t, config.eps, config.sigma, h,
                               model=config.model, t_start=config.t0)
        series.append({"t": t, **_prob_entry(confined, config.n_paths, b)})
    return ({"survival": series, "h": h,
             "censored_fraction": float(np.mean(np.isnan(exit_times)))},
            {"exit_time": exit_times})


def _run_before(config: EnsembleConfig, threads: int) -> dict:
    sq = math.sqrt(config.eps)
    grid = time_grid(config.t0, config.dt, n_steps_for(config.t0, config.t_end,
                                                       config.dt))
    n_cols = int(np.searchsorted(grid, sq + 1e-12))
    sub_grid = grid[:n_cols]
    x0 = _resolve_x0(config)
    table = env.zeta_pitchfork(config.model, config.eps, config.t0, sub_grid)
    sqrtz = table.sqrt_zeta()
    centre = x0 * np.exp(
        np.array([env.alpha(config.model, t, config.t0) for t in sub_grid])
        / config.eps)
    sups = np.empty(config.n_paths)
    at_sq = np.empty(config.n_paths)

    def per_batch(lo, hi, X, trunc):
        sups[lo:hi] = sup_deviation_batch(X[:, :n_cols], centre, sqrtz)
        at_sq[lo:hi] = X[:, n_cols - 1]

    _map_batches(config, x0, len(grid) - 1, per_batch, threads)
    series = []
    for h in config.h_list:
        b = env.bound_before(config.model, float(sub_grid[-1]), config.eps,
                             config.sigma, h, config.t0)
        series.append({"h": h, **_prob_entry(int(np.sum(sups >= h)),
                                             config.n_paths, b)})
    pred = config.sigma * math.sqrt(float(table.zeta_values[-1]))
    emp = float(np.std(at_sq, ddof=1))
    return ({"exceedance": series,
             "zeta_residual": table.ode_residual(),
             "spread_at_sqrt_eps": {"t": float(sub_grid[-1]),
                                    "empirical_std": emp,
                                    "sigma_sqrt_zeta": pred,
                                    "ratio": emp / pred}},
            {"sup_deviation": sups, "x_at_sqrt_eps": at_sq})


def _exit_measures(config: EnsembleConfig, threads: int) -> tuple:
    """Shared pass for escape/delay/branch: tau_D, tau_delay, sides, endpoint."""
    grid = time_grid(config.t0, config.dt, n_steps_for(config.t0, config.t_end,
                                                       config.dt))
    x0 = _resolve_x0(config)
    curves = branches(config.model)
    regD = env.region_D(config.model, config.eps, curves,
                        t_hi=min(config.t_end, config.model.t_max))
    width = float(curves.x_tilde(math.sqrt(config.eps)))
    n = config.n_paths
    tau_d = np.empty(n)
    side_d = np.empty(n, dtype=np.int8)
    tau_delay = np.empty(n)
    x_final = np.empty(n)

    def per_batch(lo, hi, X, trunc):
        times, sides = first_exit_batch(X, grid, regD)
        tau_d[lo:hi] = times
        side_d[lo:hi] = sides
        tau_delay[lo:hi] = delay_times_batch(X, grid, width)
        x_final[lo:hi] = X[:, -1]

    _map_batches(config, x0, len(grid) - 1, per_batch, threads)
    return grid, curves, tau_d, side_d, tau_delay, x_final


def _branch_stats(x_final: np.ndarray) -> dict:
    pos = int(np.sum(x_final > 0))
    neg = int(np.sum(x_final < 0))
    zero = int(len(x_final) - pos - neg)
    entry = _prob_entry(pos, pos + neg) if pos + neg else {}
    return {"n_positive": pos, "n_negative": neg, "n_zero": zero, **entry}


def _quantiles(values: np.ndarray) -> dict:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return {}
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    return {f"q{int(100 * q):02d}": float(np.quantile(finite, q)) for q in qs}


def _escape_series(config: EnsembleConfig, tau_d: np.ndarray) -> list:
    t0_eff = max(config.t0, math.sqrt(config.eps))
    series = []
    for t in config.t_probe_list:
        surviving = int(np.sum(~(tau_d < t)))
        b = env.bound_escape(config.model, t, t0_eff, config.eps, config.sigma,
                             C0=config.bound_c0, eta=config.eta)
        series.append({"t": t, **_prob_entry(surviving, config.n_paths, b)})
    return series


def _per_path_exits(tau_d, side_d, tau_delay, x_final) -> dict:
    return {"tau_D": tau_d, "exit_side": side_d.astype(int),
            "tau_delay": tau_delay, "x_final": x_final}


def _run_escape(config: EnsembleConfig, threads: int) -> dict:
    grid, curves, tau_d, side_d, tau_delay, x_final = _exit_measures(config,
                                                                     threads)
    return ({"survival": _escape_series(config, tau_d),
             "exit_time_quantiles": _quantiles(tau_d),
             "censored_fraction": float(np.mean(np.isnan(tau_d)))},
            _per_path_exits(tau_d, side_d, tau_delay, x_final))


def _run_delay(config: EnsembleConfig, threads: int) -> dict:
    grid, curves, tau_d, side_d, tau_delay, x_final = _exit_measures(config,
                                                                     threads)
    t_low, t_high = env.delay_interval(config.eps, config.sigma, config.model,
                                       eta=config.eta)
    finite = tau_delay[np.isfinite(tau_delay)]
    censored = 1.0 - finite.size / config.n_paths
    if finite.size:
        edges = np.linspace(config.t0, config.t_end, 81)
        counts, _ = np.histogram(finite, bins=edges)
        hist = {"edges": edges.tolist(), "counts": counts.tolist()}
    else:
        hist = {"edges": [], "counts": []}
    frac_early = float(np.mean(np.where(np.isfinite(tau_delay),
                                        tau_delay < t_low, False)))
    late = np.where(np.isfinite(tau_delay), tau_delay > t_high, True)
    return ({
        "delay_interval": {"t_low": t_low, "t_high": t_high},
        "histogram": hist,
        "censored_fraction": censored,
        "frac_below_t_low": frac_early,
        "frac_above_t_high": float(np.mean(late)),
        "delay_quantiles": _quantiles(tau_delay),
        "survival": _escape_series(config, tau_d),
        "branch": _branch_stats(x_final),
    }, _per_path_exits(tau_d, side_d, tau_delay, x_final))


def _run_branch(config: EnsembleConfig, threads: int) -> dict:
    grid, curves, tau_d, side_d, tau_delay, x_final = _exit_measures(config,
                                                                     threads)
    return ({"branch": _branch_stats(x_final), "t": float(grid[-1])},
            _per_path_exits(tau_d, side_d, tau_delay, x_final))


def _post_exit_family(model: ModelSpec, eps: float, taus: np.ndarray,
                      grid: np.ndarray, curves) -> tuple:
    """RK4 post-exit centrelines for all distinct exit nodes at once.

    Returns (xhat (n_tau, K+1), sqrt_zeta (n_tau, K+1), start column per tau);
    entries before a family member's start column are NaN.
    """
    n_tau = len(taus)
    K = len(grid) - 1
    dt = grid[1] - grid[0]
    start_col = np.rint((taus - grid[0]) / dt).astype(int)
    xhat = np.full((n_tau, K + 1), np.nan)
    active = np.zeros(n_tau, dtype=bool)
    x = np.zeros(n_tau)
    f = model.drift
    inv = 1.0 / eps
    for k in range(K + 1):
        newly = start_col == k
        if newly.any():
            x[newly] = np.asarray(curves.x_tilde(taus[newly]), dtype=float)
            active |= newly
        if active.any():
            xhat[active, k] = x[active]
        if k == K or not active.any():
            continue
        t = grid[k]
        k1 = f(x, t) * inv
        k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt) * inv
        k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt) * inv
        k4 = f(x + dt * k3, t + dt) * inv
        x = np.where(active, x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), x)

    # zeta along each centreline: vectorized exponential steps, 2 substeps
    valid = ~np.isnan(xhat)
    ab = np.asarray(model.drift_dx(np.where(valid, xhat, 0.0), grid[None, :]),
                    dtype=float)
    abar = np.where(valid, ab, -1.0)
    zeta = np.full((n_tau, K + 1), np.nan)
    z = np.zeros(n_tau)
    live = np.zeros(n_tau, dtype=bool)
    for k in range(K + 1):
        newly = start_col == k
        if newly.any():
            z[newly] = 1.0 / (2.0 * np.abs(abar[newly, k]))
            live |= newly
        if live.any():
            zeta[live, k] = z[live]
        if k == K or not live.any():
            continue
        a0 = abar[:, k]
        a1 = abar[:, k + 1]
        am = 0.5 * (a0 + a1)
        for lo_a, hi_a in ((a0, am), (am, a1)):
            m = (lo_a + hi_a) * (0.5 * dt) / eps
            E = np.exp(m)
            phi = np.where(m != 0.0, np.expm1(m) / np.where(m == 0.0, 1.0, m), 1.0)
            z = np.where(live, z * E + (0.5 * dt / eps) * phi, z)
    return xhat, np.sqrt(zeta), start_col


def _run_approach(config: EnsembleConfig, threads: int) -> dict:
    grid, curves, tau_d, side_d, tau_delay, x_final = _exit_measures(config,
                                                                     threads)
    lo_w, hi_w = config.tau_window
    selected = np.isfinite(tau_d) & (tau_d >= lo_w) & (tau_d <= hi_w) \
        & (side_d != 0)
    n_sel = int(np.sum(selected))
    results: dict = {"n_selected": n_sel,
                     "selection_fraction": n_sel / config.n_paths,
                     "tau_window": list(config.tau_window)}
    if n_sel == 0:
        return results, {"tau_D": tau_d}

    taus = np.unique(tau_d[selected])
    xhat, sqrtz, start_col = _post_exit_family(config.model, config.eps, taus,
                                               grid, curves)
    tau_index = {t: i for i, t in enumerate(taus)}
    path_tau_idx = np.full(config.n_paths, -1, dtype=int)
    for p in np.nonzero(selected)[0]:
        path_tau_idx[p] = tau_index[tau_d[p]]

    sups = np.full(config.n_paths, np.nan)
    final_dev = np.full(config.n_paths, np.nan)
    x0 = _resolve_x0(config)

    def per_batch(lo, hi, X, trunc):
        rows = np.nonzero(selected[lo:hi])[0]
        for r in rows:
            p = lo + r
            j = path_tau_idx[p]
            k0 = start_col[j]
            sgn = float(side_d[p])
            dev = np.abs(sgn * X[r, k0:] - xhat[j, k0:]) / sqrtz[j, k0:]
            sups[p] = dev.max()
            final_dev[p] = sgn * X[r, -1] - xhat[j, -1]

    _map_batches(config, x0, len(grid) - 1, per_batch, threads)

    series = []
    for h in config.h_list:
        b = env.bound_approach(config.model, config.t_end, config.eps,
                               config.sigma, h, tau=float(lo_w))
        series.append({"h": h, **_prob_entry(int(np.nansum(sups >= h)),
                                             n_sel, b)})
    devs = final_dev[selected]
    pred = config.sigma * float(np.median(sqrtz[:, -1]))
    emp = float(np.std(devs, ddof=1)) if devs.size > 1 else math.nan
    results.update({
        "exceedance": series,
        "spread_at_end": {"t": float(grid[-1]), "empirical_std": emp,
                          "sigma_sqrt_zeta": pred,
                          "ratio": emp / pred if pred else math.nan},
        "sup_deviation_quantiles": _quantiles(sups[selected]),
    })
    return results, {"tau_D": tau_d, "sup_deviation": sups}


_RUNNERS = {
    "stable": _run_stable,
    "unstable": _run_unstable,
    "before": _run_before,
    "escape": _run_escape,
    "delay": _run_delay,
    "branch": _run_branch,
    "approach": _run_approach,
}


def run_ensemble(config: EnsembleConfig, threads: int = 1) -> EnsembleReport:
    """Simulate the configured ensemble and assemble its report.

    The report payload is a pure function of the config; reruns with any
    thread count produce identical bytes.
    """
    start = time.perf_counter()
    results, per_path = _RUNNERS[config.tag](config, threads)
    report = EnsembleReport(
        config=config.to_dict(), config_hash=config_hash(config),
        tag=config.tag, backend=BACKEND, results=results,
        runtime_seconds=time.perf_counter() - start, per_path=per_path)
    return report


def exceedance_curve(config: EnsembleConfig, h_list=None,
                     threads: int = 1) -> list:
    """Per-h exceedance rows (h, p_hat, ci, bound) for the sup-deviation tags."""
    if config.tag not in ("stable", "before", "approach"):
        raise ValueError("exceedance_curve applies to stable/before/approach")
    if h_list is not None:
        config = dataclasses.replace(config, h_list=tuple(h_list))
    report = run_ensemble(config, threads=threads)
    return report.results["exceedance"]
