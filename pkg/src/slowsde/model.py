"""Drift families, their linearization, and the bifurcation geometry.

A model bundles the drift f(x, t), its x-derivative, the linearization a(t)
along the reference branch, and the structural constants (lambda window,
slope bounds, domain rectangle) that every other module consumes.  Models
are immutable after construction and all operations here are pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.stats import qmc

from .errors import RootNotBracketed, ValidationFailure

__all__ = [
    "PolyDrift",
    "ValidationReport",
    "ModelSpec",
    "BranchCurves",
    "standard_pitchfork",
    "make_model",
    "model_from_coeffs",
    "model_from_dict",
    "model_from_json",
    "branches",
    "alpha",
]

SYMMETRY_TOL = 1e-9
DERIVATIVE_TOL = 1e-6
ROOT_TOL = 1e-13


class PolyDrift:
    """Polynomial drift f(x, t) = sum_ij c[i, j] x^i t^j.

    Evaluation is Horner in t for the x^i coefficients, then Horner in x.
    The stepping kernels reuse exactly this coefficient/evaluation order, so
    compiled and NumPy backends produce bit-identical paths.
    """

    def __init__(self, coeffs: Sequence[Sequence[float]]):
        if isinstance(coeffs, (list, tuple)) and coeffs and \
                isinstance(coeffs[0], (list, tuple)):
            width = max(len(row) for row in coeffs)
            c = np.zeros((len(coeffs), width))
            for i, row in enumerate(coeffs):
                c[i, :len(row)] = row
        else:
            c = np.asarray(coeffs, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
        if c.ndim != 2 or c.size == 0:
            raise ValueError("coeffs must be a 2-d array c[i][j] for x^i t^j")
        self.coeffs = np.ascontiguousarray(c)

    @property
    def deg_x(self) -> int:
        return self.coeffs.shape[0] - 1

    def coeff_at(self, t):
        """Coefficients of x^i at time t (Horner in t), shape (deg_x + 1,)."""
        c = self.coeffs
        out = []
        for i in range(c.shape[0]):
            v = c[i, -1]
            for j in range(c.shape[1] - 2, -1, -1):
                v = v * t + c[i, j]
            out.append(v)
        return out

    def coeff_table(self, t_values: np.ndarray) -> np.ndarray:
        """Per-step coefficient matrix, shape (len(t_values), deg_x + 1)."""
        t = np.asarray(t_values, dtype=float)
        tab = np.empty((t.size, self.coeffs.shape[0]))
        for i, col in enumerate(self.coeff_at(t)):
            tab[:, i] = col
        return np.ascontiguousarray(tab)

    def __call__(self, x, t):
        ct = self.coeff_at(t)
        f = ct[-1]
        if np.ndim(x) > 0 and np.ndim(f) == 0:
            f = np.full(np.shape(x), f)
        for i in range(len(ct) - 2, -1, -1):
            f = f * x + ct[i]
        return f

    def dx(self) -> "PolyDrift":
        c = self.coeffs
        if c.shape[0] == 1:
            return PolyDrift(np.zeros((1, c.shape[1])))
        rows = [c[i] * i for i in range(1, c.shape[0])]
        return PolyDrift(np.vstack(rows))

    def is_odd_in_x(self) -> bool:
        return bool(np.all(self.coeffs[0::2] == 0.0))


@dataclass(frozen=True)
class ValidationReport:
    """Residuals from the structural checks run at model construction."""

    symmetry_residual: float
    fx_origin: float
    fxt_origin: float
    fxxx_origin: float
    a_plus: float
    a_minus: float
    big_m: float
    drift_dx_numeric: bool
    messages: tuple = ()


@dataclass(frozen=True)
class ModelSpec:
    """A drift family with its geometry and structural constants.

    The domain is the rectangle |x| <= d, t_min <= t <= t_max.  `a` is the
    linearization along the reference branch (the origin for pitchfork
    models, the equilibrium curve otherwise).  `lambda_param` positions the
    inner escape-region boundary and must lie strictly in (1/3, 1/2);
    `eta` deflates the leading-order repulsion rate, kappa_eff =
    (1 - lambda) * (1 - eta), as a safety margin for dropped corrections.
    """

    kind: str
    drift: Callable
    drift_dx: Callable
    a: Callable
    d: float
    t_min: float
    t_max: float
    lambda_param: float = 0.4
    eta: float = 0.1
    a_plus: float = 1.0
    a_minus: float = 1.0
    alpha_closed: Optional[Callable] = None
    equilibrium: Optional[Callable] = None
    poly: Optional[PolyDrift] = None
    validation: Optional[ValidationReport] = None
    name: str = "model"

    def __post_init__(self):
        if self.kind not in ("stable-branch", "unstable-branch", "pitchfork"):
            raise ValidationFailure(f"unknown model kind {self.kind!r}")
        if self.kind == "pitchfork" and not (1 / 3 < self.lambda_param < 1 / 2):
            raise ValidationFailure(
                f"lambda_param={self.lambda_param} outside the open window (1/3, 1/2)"
            )
        if not 0 <= self.eta < 1:
            raise ValidationFailure("eta must lie in [0, 1)")

    @property
    def T(self) -> float:
        return self.t_max

    def in_domain(self, x: float, t: float) -> bool:
        return abs(x) <= self.d and self.t_min <= t <= self.t_max

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "name": self.name, "d": self.d,
               "t_range": [self.t_min, self.t_max]}
        if self.kind == "pitchfork":
            out["lambda"] = self.lambda_param
            out["eta"] = self.eta
        if self.poly is not None:
            out["coeffs"] = self.poly.coeffs.tolist()
        return out


def _numeric_dx(drift: Callable) -> Callable:
    def fx(x, t):
        h = 1e-6 * np.maximum(1.0, np.abs(x))
        return (drift(x + h, t) - drift(x - h, t)) / (2.0 * h)

    return fx


def _richardson(d_of_h: Callable[[float], float], h: float) -> float:
    # one Richardson step for an O(h^2) central-difference stencil
    return (4.0 * d_of_h(h / 2.0) - d_of_h(h)) / 3.0


def _validate_pitchfork(drift, drift_dx, d, T, n_points=1000) -> tuple:
    sampler = qmc.Halton(d=2, scramble=False)
    pts = sampler.random(n_points)
    xs = (2.0 * pts[:, 0] - 1.0) * d
    ts = (2.0 * pts[:, 1] - 1.0) * T
    sym = float(np.max(np.abs(np.asarray(drift(xs, ts)) + np.asarray(drift(-xs, ts)))))

    h0 = 1e-3 * min(1.0, d, T)
    fx0 = _richardson(lambda h: (drift(h, 0.0) - drift(-h, 0.0)) / (2 * h), h0)
    fxt0 = _richardson(
        lambda h: (drift(h, h) - drift(-h, h) - drift(h, -h) + drift(-h, -h))
        / (4 * h * h),
        h0,
    )

    def d3(h):
        return (drift(2 * h, 0.0) - 2 * drift(h, 0.0)
                + 2 * drift(-h, 0.0) - drift(-2 * h, 0.0)) / (2 * h ** 3)

    h3 = 1e-2 * min(1.0, d)
    fxxx0 = _richardson(d3, h3)

    # bound on |f_xxx| over the rectangle (enters only as the 6M estimate)
    big_m = 0.0
    for x, t in zip(xs[:200], ts[:200]):
        big_m = max(big_m, abs(_richardson(lambda h: (
            drift(x + 2 * h, t) - 2 * drift(x + h, t)
            + 2 * drift(x - h, t) - drift(x - 2 * h, t)) / (2 * h ** 3), h3)) / 6.0)
    return sym, float(fx0), float(fxt0), float(fxxx0), big_m


def _slope_bounds(a: Callable, kind: str, t_max: float) -> tuple:
    tg = np.linspace(t_max / 200.0, t_max, 200)
    av = np.asarray([float(a(t)) for t in tg])
    if kind == "pitchfork":
        ratio = av / tg
        return float(np.max(ratio)), float(np.min(ratio))
    mag = np.abs(av)
    return float(np.max(mag)), float(np.min(mag))


def make_model(drift: Callable, config: dict) -> ModelSpec:
    """Build a validated ModelSpec from a drift callable and a config dict.

    config keys: kind (required); lambda, eta, d, T or t_range; optional
    drift_dx, a, alpha_closed, equilibrium callables; name.  Pitchfork
    models are checked for oddness and the supercritical derivative
    conditions; violations raise ValidationFailure.
    """
    kind = config["kind"]
    d = float(config.get("d", 1.0))
    if "t_range" in config:
        t_min, t_max = (float(v) for v in config["t_range"])
    else:
        t_hi = float(config.get("T", 1.0))
        t_min, t_max = (-t_hi, t_hi) if kind == "pitchfork" else (0.0, t_hi)

    drift_dx = config.get("drift_dx")
    dx_numeric = drift_dx is None
    if drift_dx is None:
        drift_dx = _numeric_dx(drift)

    messages = []
    sym = fx0 = fxt0 = fxxx0 = 0.0
    big_m = 0.0
    if kind == "pitchfork":
        sym, fx0, fxt0, fxxx0, big_m = _validate_pitchfork(drift, drift_dx, d, t_max)
        if sym > SYMMETRY_TOL:
            raise ValidationFailure(
                f"symmetry residual {sym:.3g} exceeds {SYMMETRY_TOL:g}; "
                "drift is not odd in x")
        if abs(fx0) > DERIVATIVE_TOL:
            raise ValidationFailure(f"df/dx(0,0) = {fx0:.3g}, expected 0")
        if abs(fxt0 - 1.0) > DERIVATIVE_TOL:
            raise ValidationFailure(f"d2f/dtdx(0,0) = {fxt0:.3g}, expected 1")
        if abs(fxxx0 + 6.0) > DERIVATIVE_TOL:
            raise ValidationFailure(
                f"d3f/dx3(0,0) = {fxxx0:.3g}, expected -6 (supercritical)")

    a = config.get("a")
    equilibrium = config.get("equilibrium")
    if a is None:
        if kind == "pitchfork":
            a = lambda t: drift_dx(0.0, t)  # noqa: E731
        elif equilibrium is not None:
            a = lambda t: drift_dx(equilibrium(t), t)  # noqa: E731
        else:
            raise ValidationFailure(
                f"kind {kind!r} needs either an `a` callable or an "
                "`equilibrium` branch in the config")
    a_plus, a_minus = _slope_bounds(a, kind, t_max)
    if dx_numeric:
        messages.append("drift_dx from central differences (step 1e-6*max(1,|x|))")

    report = ValidationReport(
        symmetry_residual=sym, fx_origin=fx0, fxt_origin=fxt0,
        fxxx_origin=fxxx0, a_plus=a_plus, a_minus=a_minus, big_m=big_m,
        drift_dx_numeric=dx_numeric, messages=tuple(messages))

    return ModelSpec(
        kind=kind, drift=drift, drift_dx=drift_dx, a=a, d=d,
        t_min=t_min, t_max=t_max,
        lambda_param=float(config.get("lambda", 0.4)),
        eta=float(config.get("eta", 0.1)),
        a_plus=a_plus, a_minus=a_minus,
        alpha_closed=config.get("alpha_closed"),
        equilibrium=equilibrium,
        poly=config.get("poly"),
        validation=report,
        name=config.get("name", "custom"),
    )


def model_from_coeffs(coeffs, config: dict) -> ModelSpec:
    """Model from a polynomial coefficient matrix c[i][j] * x^i * t^j."""
    poly = PolyDrift(coeffs)
    kind = config["kind"]
    if kind == "pitchfork" and not poly.is_odd_in_x():
        raise ValidationFailure("pitchfork coefficient matrix must use odd x powers only")
    cfg = dict(config)
    cfg["poly"] = poly
    cfg["drift_dx"] = poly.dx()

    a_row = poly.coeffs[1] if poly.coeffs.shape[0] > 1 else np.zeros(1)

    def a_fn(t):
        v = a_row[-1]
        for j in range(len(a_row) - 2, -1, -1):
            v = v * t + a_row[j]
        return v

    anti = np.concatenate([[0.0], a_row / np.arange(1, len(a_row) + 1)])

    def alpha_closed(t, s):
        def F(u):
            v = anti[-1]
            for j in range(len(anti) - 2, -1, -1):
                v = v * u + anti[j]
            return v
        return F(t) - F(s)

    if kind == "pitchfork":
        cfg.setdefault("a", a_fn)
    elif "equilibrium" in cfg:
        eq = cfg["equilibrium"]
        dx = cfg["drift_dx"]
        cfg.setdefault("a", lambda t: dx(eq(t), t))
    else:
        # fall back to the origin linearization (valid when x*ature == 0)
        cfg.setdefault("a", a_fn)
    if cfg.get("a") is a_fn:
        cfg.setdefault("alpha_closed", alpha_closed)
    return make_model(poly, cfg)


def standard_pitchfork(lambda_param: float = 0.4, d: float = 1.0,
                       T: float = 1.0, eta: float = 0.1) -> ModelSpec:
    """The reference cubic model f(x, t) = t*x - x**3.

    Closed forms: a(t) = t, alpha(t, s) = (t^2 - s^2)/2, branches
    x_star = sqrt(t), x_bar = sqrt(t/3).
    """
    coeffs = np.zeros((4, 2))
    coeffs[1, 1] = 1.0   # t*x
    coeffs[3, 0] = -1.0  # -x^3
    model = model_from_coeffs(
        coeffs,
        {"kind": "pitchfork", "lambda": lambda_param, "d": d, "T": T,
         "eta": eta, "name": "standard",
         "a": lambda t: t,
         "alpha_closed": lambda t, s: 0.5 * (t * t - s * s)},
    )
    return model


def model_from_dict(doc: dict) -> ModelSpec:
    """Load a model from its JSON document form.

    Either {"kind": "pitchfork", "builtin": "standard", ...} or a
    coefficient list {"kind": ..., "coeffs": [[...], ...], ...}.  For
    nonbifurcating kinds an optional "equilibrium" entry gives the branch
    as a polynomial in t (coefficient list, low order first).
    """
    if doc.get("builtin") == "standard":
        return standard_pitchfork(
            lambda_param=float(doc.get("lambda", 0.4)),
            d=float(doc.get("d", 1.0)),
            T=float(doc.get("T", 1.0)),
            eta=float(doc.get("eta", 0.1)))
    if "coeffs" not in doc:
        raise ValidationFailure("model document needs 'builtin' or 'coeffs'")
    cfg = {k: v for k, v in doc.items() if k in
           ("kind", "lambda", "eta", "d", "T", "t_range", "name")}
    if "equilibrium" in doc:
        eq_c = np.asarray(doc["equilibrium"], dtype=float)
        cfg["equilibrium"] = lambda t: float(np.polyval(eq_c[::-1], t))
    return model_from_coeffs(doc["coeffs"], cfg)


def model_from_json(path) -> ModelSpec:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# bifurcation geometry


def _vectorized(fn: Callable[[float], float]) -> Callable:
    def wrapped(t):
        if np.ndim(t) == 0:
            return fn(float(t))
        return np.array([fn(float(v)) for v in np.ravel(t)]).reshape(np.shape(t))

    return wrapped


@dataclass(frozen=True)
class BranchCurves:
    """Equilibrium branches and region boundaries of a pitchfork model.

    x_star is the positive stable branch, x_bar the inflection curve where
    df/dx vanishes, x_tilde = sqrt(lambda) * x_star the escape-region
    boundary sitting strictly between them.  kappa and varrho are the
    leading-order drift rates inside / outside the region.
    """

    x_star: Callable
    x_bar: Callable
    x_tilde: Callable
    a_star: Callable
    kappa: float
    varrho: float
    t_grid: Optional[np.ndarray] = None
    x_star_values: Optional[np.ndarray] = None
    x_bar_values: Optional[np.ndarray] = None
    x_tilde_values: Optional[np.ndarray] = None
    a_star_values: Optional[np.ndarray] = None

    def kappa_eff(self, eta: float) -> float:
        return self.kappa * (1.0 - eta)


def _root_x_bar(model: ModelSpec, t: float) -> float:
    lo = 1e-4 * math.sqrt(t)
    hi = min(model.d, 2.0 * math.sqrt(t))
    flo = model.drift_dx(lo, t)
    fhi = model.drift_dx(hi, t)
    if not (flo > 0 > fhi):
        raise RootNotBracketed(
            f"df/dx(., t={t:g}) has no sign change on ({lo:g}, {hi:g}); "
            "domain too large for the bifurcation neighbourhood")
    return float(optimize.brentq(lambda x: model.drift_dx(x, t), lo, hi,
                                 xtol=ROOT_TOL, rtol=8.9e-16))


def _root_x_star(model: ModelSpec, t: float, x_bar: float) -> float:
    lo = x_bar + 1e-9 + 1e-6 * math.sqrt(t)
    hi = model.d
    flo = model.drift(lo, t)
    fhi = model.drift(hi, t)
    if not (flo > 0 > fhi):
        raise RootNotBracketed(
            f"f(., t={t:g}) has no sign change on ({lo:g}, {hi:g}); "
            "shrink d or T to stay in the bifurcation neighbourhood")
    return float(optimize.brentq(lambda x: model.drift(x, t), lo, hi,
                                 xtol=ROOT_TOL, rtol=8.9e-16))


def branches(model: ModelSpec, t_grid=None) -> BranchCurves:
    """Equilibrium branches of a pitchfork model, tabulated if a grid is given.

    The standard model uses its closed forms; anything else is found by
    bracketed bisection, with bracket failure raised as RootNotBracketed.
    The ordering x_bar < x_tilde < x_star is verified at every node.
    """
    if model.kind != "pitchfork":
        raise ValidationFailure("branches() applies to pitchfork models only")
    lam = model.lambda_param
    sqrt_lam = math.sqrt(lam)

    if model.name == "standard":
        x_star = lambda t: np.sqrt(t)            # noqa: E731
        x_bar = lambda t: np.sqrt(t / 3.0)       # noqa: E731
        x_tilde = lambda t: sqrt_lam * np.sqrt(t)  # noqa: E731
        a_star = lambda t: -2.0 * np.asarray(t) if np.ndim(t) else -2.0 * t  # noqa: E731
    else:
        x_bar = _vectorized(lambda t: _root_x_bar(model, t))
        x_star = _vectorized(lambda t: _root_x_star(model, t, _root_x_bar(model, t)))
        x_tilde = lambda t: sqrt_lam * x_star(t)  # noqa: E731
        a_star = lambda t: model.drift_dx(x_star(t), t)  # noqa: E731

    curves = dict(x_star=x_star, x_bar=x_bar, x_tilde=x_tilde, a_star=a_star,
                  kappa=1.0 - lam, varrho=3.0 * lam - 1.0)

    if t_grid is not None:
        tg = np.asarray(t_grid, dtype=float)
        if np.any(tg <= 0) or np.any(tg > model.t_max):
            raise ValidationFailure("branch grid must lie in (0, T]")
        xs = np.asarray(x_star(tg), dtype=float)
        xb = np.asarray(x_bar(tg), dtype=float)
        xt = np.asarray(x_tilde(tg), dtype=float)
        asv = np.asarray(a_star(tg), dtype=float)
        if not np.all((xb < xt) & (xt < xs)):
            raise ValidationFailure("branch ordering x_bar < x_tilde < x_star failed")
        if not np.all(asv < 0):
            raise ValidationFailure("a_star must be negative on (0, T]")
        resid = np.max(np.abs(np.asarray(model.drift(xs, tg))))
        if resid > 1e-10:
            raise ValidationFailure(f"f(x_star, t) residual {resid:.3g} > 1e-10")
        curves.update(t_grid=tg, x_star_values=xs, x_bar_values=xb,
                      x_tilde_values=xt, a_star_values=asv)
    return BranchCurves(**curves)


def alpha(model: ModelSpec, t: float, s: float) -> float:
    """Accumulated linearization integral of a(u) from s to t.

    Uses the closed form when the model carries one, otherwise adaptive
    quadrature at 1e-10 relative tolerance.
    """
    if model.alpha_closed is not None:
        return float(model.alpha_closed(t, s))
    if t == s:
        return 0.0
    val, _ = integrate.quad(model.a, s, t, epsabs=1e-14, epsrel=1e-10, limit=200)
    return float(val)
