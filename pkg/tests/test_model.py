import math

import numpy as np
import pytest

from slowsde import (PolyDrift, RootNotBracketed, ValidationFailure, alpha,
                     branches, make_model, model_from_coeffs, model_from_dict,
                     standard_pitchfork)


def bisect_root(f, lo, hi, iters=200):
    """Plain bisection oracle, independent of the library's root finding."""
    flo = f(lo)
    assert flo * f(hi) < 0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if flo * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
            flo = f(lo)
    return 0.5 * (lo + hi)


class TestStandardModel:
    def test_drift_value(self, standard):
        assert standard.drift(0.5, 0.2) == pytest.approx(-0.025, abs=1e-15)

    def test_branch_root(self, standard):
        c = branches(standard)
        assert float(c.x_star(0.25)) == pytest.approx(0.5, abs=1e-14)
        assert standard.drift(0.5, 0.25) == pytest.approx(0.0, abs=1e-14)

    def test_alpha_odd_symmetry(self, standard):
        assert alpha(standard, 1.0, -1.0) == 0.0

    def test_alpha_closed(self, standard):
        assert alpha(standard, 1.0, 0.0) == pytest.approx(0.5, abs=1e-15)
        assert alpha(standard, 0.37, 0.37) == 0.0

    def test_defaults(self, standard):
        assert standard.lambda_param == 0.4
        assert standard.d == 1.0
        assert standard.t_max == 1.0

    def test_branch_closed_forms(self, standard):
        c = branches(standard)
        assert float(c.x_star(0.09)) == pytest.approx(0.3, abs=1e-15)
        assert float(c.x_bar(0.09)) == pytest.approx(math.sqrt(0.03), abs=1e-15)
        assert float(c.x_tilde(0.09)) == pytest.approx(math.sqrt(0.4) * 0.3,
                                                       abs=1e-15)
        assert float(c.a_star(0.09)) == pytest.approx(-0.18, abs=1e-15)

    def test_kappa_varrho(self, standard):
        c = branches(standard)
        assert c.kappa == pytest.approx(0.6)
        assert c.varrho == pytest.approx(0.2)
        assert 0.5 < c.kappa < 2 / 3
        assert 0.0 < c.varrho < 0.5
        assert c.kappa_eff(0.1) == pytest.approx(0.54)


class TestMakeModel:
    def test_quintic_accepted_and_root(self, quintic):
        c = branches(quintic)
        for t in (0.04, 0.09, 0.16):
            xs = float(c.x_star(t))
            oracle = bisect_root(lambda x: quintic.drift(x, t),
                                 float(c.x_bar(t)) + 1e-9, quintic.d)
            assert xs == pytest.approx(oracle, abs=1e-12)
            assert abs(quintic.drift(xs, t)) < 1e-12

    def test_quintic_tabulated(self, quintic):
        tg = np.linspace(0.02, 0.2, 19)
        c = branches(quintic, tg)
        assert np.all(c.x_bar_values < c.x_tilde_values)
        assert np.all(c.x_tilde_values < c.x_star_values)
        assert np.all(c.a_star_values < 0)

    def test_bracket_failure_outside_neighbourhood(self):
        # with d = 1 the quintic has a second equilibrium family in range
        m = model_from_coeffs(
            [[0.0], [0.0, 1.0], [0.0], [-1.0], [0.0], [1.0]],
            {"kind": "pitchfork", "d": 1.0, "T": 0.2, "name": "quintic-wide"})
        with pytest.raises(RootNotBracketed):
            branches(m, np.linspace(0.05, 0.2, 4))

    def test_non_odd_rejected(self):
        with pytest.raises(ValidationFailure, match="symmetry"):
            make_model(lambda x, t: t * x - x ** 3 + 0.1,
                       {"kind": "pitchfork"})

    def test_subcritical_rejected(self):
        with pytest.raises(ValidationFailure, match="supercritical"):
            make_model(lambda x, t: t * x + x ** 3, {"kind": "pitchfork"})

    def test_lambda_window_enforced(self):
        for lam in (1 / 3, 0.5, 0.6):
            with pytest.raises(ValidationFailure, match="lambda"):
                standard_pitchfork(lambda_param=lam)

    def test_callable_drift_accepted(self):
        m = make_model(lambda x, t: t * x - x ** 3, {"kind": "pitchfork"})
        assert m.validation.symmetry_residual < 1e-12
        assert abs(m.validation.fxt_origin - 1.0) < 1e-6
        assert abs(m.validation.fxxx_origin + 6.0) < 1e-6
        assert m.validation.drift_dx_numeric


class TestAlpha:
    def test_quadrature_vs_antiderivative(self):
        # a(t) = t + t^2 via a pitchfork drift (t + t^2) x - x^3
        m = model_from_coeffs([[0.0], [0.0, 1.0, 1.0], [0.0], [-1.0]],
                              {"kind": "pitchfork", "T": 0.6, "name": "tt2"})
        # model carries the closed form; compare against quadrature directly
        closed = m.alpha_closed(0.5, -0.5)
        exact = (0.5 ** 2 / 2 + 0.5 ** 3 / 3) - ((-0.5) ** 2 / 2 + (-0.5) ** 3 / 3)
        assert closed == pytest.approx(exact, abs=1e-15)
        from scipy.integrate import quad
        quad_val, _ = quad(m.a, -0.5, 0.5, epsabs=1e-14, epsrel=1e-10)
        assert closed == pytest.approx(quad_val, abs=1e-10)

    def test_additivity(self, standard, rng):
        for _ in range(50):
            t, s, u = rng.uniform(-1, 1, 3)
            lhs = alpha(standard, t, s) + alpha(standard, s, u)
            assert lhs == pytest.approx(alpha(standard, t, u), abs=1e-9)

    def test_sign_structure(self, standard):
        # decreasing before zero, increasing after, for t0 < 0
        t0 = -0.8
        ts = np.linspace(t0, 1.0, 181)
        vals = np.array([alpha(standard, t, t0) for t in ts])
        diffs = np.diff(vals)
        assert np.all(diffs[ts[:-1] < -1e-9] < 0)
        assert np.all(diffs[ts[:-1] > 1e-9] > 0)


class TestPolyDrift:
    def test_ragged_rows_padded(self):
        p = PolyDrift([[0.0], [0.0, 1.0], [0.0], [-1.0]])
        assert p.coeffs.shape == (4, 2)
        assert p(0.5, 0.2) == pytest.approx(0.2 * 0.5 - 0.125)

    def test_derivative(self):
        p = PolyDrift([[0.0], [0.0, 1.0], [0.0], [-1.0]])
        dp = p.dx()
        assert dp(0.3, 0.2) == pytest.approx(0.2 - 3 * 0.09, abs=1e-15)

    def test_oddness_of_standard(self, standard, rng):
        xs = rng.uniform(-1, 1, 200)
        ts = rng.uniform(-1, 1, 200)
        assert np.array_equal(standard.drift(-xs, ts), -standard.drift(xs, ts))


class TestModelDocuments:
    def test_builtin_roundtrip(self):
        m = model_from_dict({"kind": "pitchfork", "builtin": "standard"})
        assert m.name == "standard"
        doc = m.to_dict()
        assert doc["lambda"] == 0.4

    def test_coeff_document(self):
        m = model_from_dict({"kind": "pitchfork",
                             "coeffs": [[0.0], [0.0, 1.0], [0.0], [-1.0]]})
        assert m.kind == "pitchfork"
        assert m.drift(0.5, 0.2) == pytest.approx(-0.025)

    def test_slope_bounds_quintic(self, quintic):
        # a(t) = t exactly for the quintic too (the x^5 term has no x^1 part)
        assert quintic.a_plus == pytest.approx(1.0, abs=1e-12)
        assert quintic.a_minus == pytest.approx(1.0, abs=1e-12)
