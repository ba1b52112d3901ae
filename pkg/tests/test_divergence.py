import math

import mpmath
import numpy as np
import pytest

from betanmf.divergence import (
    BetaParams,
    DomainError,
    Regime,
    beta_divergence,
    beta_divergence_deriv,
    decompose,
    eps_floor,
    scalar_aux,
    scale_check,
)

BETAS = [-1.0, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0]


def mp_divergence(x, y, beta):
    """Direct high-precision evaluation of the three-branch definition."""
    x, y, b = mpmath.mpf(x), mpmath.mpf(y), mpmath.mpf(beta)
    with mpmath.workdps(50):
        if beta == 0:
            return float(x / y - mpmath.log(x / y) - 1)
        if beta == 1:
            return float(x * mpmath.log(x / y) - x + y)
        return float((x**b + (b - 1) * y**b - b * x * y ** (b - 1)) / (b * (b - 1)))


class TestBetaParams:
    @pytest.mark.parametrize(
        "beta, gamma, regime",
        [
            (-1.0, 1 / 3, Regime.BELOW_ZERO),
            (0.0, 0.5, Regime.ZERO_TO_ONE),
            (0.5, 2 / 3, Regime.ZERO_TO_ONE),
            (1.0, 1.0, Regime.ONE_TO_TWO),
            (2.0, 1.0, Regime.ONE_TO_TWO),
            (3.0, 0.5, Regime.ABOVE_TWO),
        ],
    )
    def test_gamma_and_regime(self, beta, gamma, regime):
        p = BetaParams(beta)
        assert p.gamma == pytest.approx(gamma, rel=1e-15)
        assert p.regime is regime

    def test_gamma_never_exceeds_one(self):
        for b in np.linspace(-10, 10, 2001):
            assert BetaParams(b).gamma <= 1.0

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            BetaParams(float("nan"))


class TestBetaDivergence:
    @pytest.mark.parametrize("beta", BETAS)
    def test_zero_on_diagonal(self, beta):
        assert beta_divergence(1.0, 1.0, beta) == 0.0

    def test_euclidean(self):
        assert beta_divergence(1.0, 2.0, 2) == pytest.approx(0.5, rel=1e-15)

    def test_kl(self):
        assert beta_divergence(1.0, 2.0, 1) == pytest.approx(2 - 1 - math.log(2), rel=1e-14)

    def test_is(self):
        assert beta_divergence(2.0, 1.0, 0) == pytest.approx(2 - math.log(2) - 1, rel=1e-14)

    @pytest.mark.parametrize("beta", BETAS + [-2.5, 0.25, 1.25, 4.0])
    def test_matches_high_precision(self, beta, rng):
        x = rng.uniform(0.05, 20, 50)
        y = rng.uniform(0.05, 20, 50)
        got = beta_divergence(x, y, beta)
        want = np.array([mp_divergence(a, b, beta) for a, b in zip(x, y)])
        np.testing.assert_allclose(got, want, rtol=1e-9)

    @pytest.mark.parametrize("beta", BETAS)
    def test_nonnegative_with_unique_minimum(self, beta, rng):
        x = rng.uniform(0.01, 100, 1000)
        y = rng.uniform(0.01, 100, 1000)
        y[:10] = x[:10]
        d = beta_divergence(x, y, beta)
        assert np.all(d >= 0)
        np.testing.assert_array_equal(d == 0, np.abs(x - y) < 1e-12)

    @pytest.mark.parametrize("limit", [0.0, 1.0])
    def test_continuous_in_beta(self, limit, rng):
        x = rng.uniform(0.1, 10, 200)
        y = rng.uniform(0.1, 10, 200)
        ref = beta_divergence(x, y, limit)
        for b in (limit - 1e-6, limit + 1e-6):
            np.testing.assert_allclose(beta_divergence(x, y, b), ref, rtol=1e-4)

    @pytest.mark.parametrize(
        "x, y, beta",
        [(1.0, 0.0, 1.0), (1.0, -1.0, 2.0), (-1.0, 1.0, 2.0), (0.0, 1.0, 0.0), (0.0, 1.0, -1.0)],
    )
    def test_domain_errors(self, x, y, beta):
        with pytest.raises(DomainError):
            beta_divergence(x, y, beta)

    @pytest.mark.parametrize("beta", [0.5, 1.0, 1.5, 2.0, 3.0])
    def test_zero_data_allowed_for_positive_beta(self, beta):
        # limit x -> 0 of the definition: y^beta / beta (y for KL)
        assert beta_divergence(0.0, 2.0, beta) == pytest.approx(2.0**beta / beta, rel=1e-14)

    def test_broadcasts(self):
        d = beta_divergence(np.ones((3, 4)), np.full((3, 4), 2.0), 2)
        assert d.shape == (3, 4)
        np.testing.assert_allclose(d, 0.5)


class TestDerivatives:
    def test_zero_at_minimum(self):
        d1, _ = beta_divergence_deriv(1.0, 1.0, 1.5)
        assert d1 == 0.0

    def test_euclidean(self):
        assert beta_divergence_deriv(1.0, 2.0, 2) == (pytest.approx(1.0), pytest.approx(1.0))

    def test_is(self):
        d1, d2 = beta_divergence_deriv(1.0, 0.5, 0)
        assert d1 == pytest.approx(-2.0, rel=1e-15)
        assert d2 == pytest.approx(12.0, rel=1e-15)

    @pytest.mark.parametrize("beta", BETAS)
    def test_first_derivative_by_central_differences(self, beta, rng):
        x = rng.uniform(0.1, 10, 300)
        y = rng.uniform(0.1, 10, 300)
        h = 1e-5 * y
        fd = (beta_divergence(x, y + h, beta) - beta_divergence(x, y - h, beta)) / (2 * h)
        d1, _ = beta_divergence_deriv(x, y, beta)
        # skip points where the derivative itself is tiny
        ok = np.abs(d1) > 1e-3
        np.testing.assert_allclose(d1[ok], fd[ok], rtol=1e-6)

    @pytest.mark.parametrize("beta", BETAS)
    def test_second_derivative_by_central_differences(self, beta, rng):
        x = rng.uniform(0.1, 10, 100)
        y = rng.uniform(0.5, 10, 100)
        h = 1e-5 * y
        d1p, _ = beta_divergence_deriv(x, y + h, beta)
        d1m, _ = beta_divergence_deriv(x, y - h, beta)
        _, d2 = beta_divergence_deriv(x, y, beta)
        ok = np.abs(d2) > 1e-3
        np.testing.assert_allclose(d2[ok], ((d1p - d1m) / (2 * h))[ok], rtol=1e-5)

    @pytest.mark.parametrize("beta", [1.0, 1.25, 1.5, 2.0])
    def test_convex_between_one_and_two(self, beta, rng):
        _, d2 = beta_divergence_deriv(rng.uniform(0, 10, 500), rng.uniform(0.01, 10, 500), beta)
        assert np.all(d2 >= 0)

    def test_sign_of_first_derivative(self, rng):
        x = rng.uniform(0.1, 10, 500)
        y = rng.uniform(0.1, 10, 500)
        for b in BETAS:
            d1, _ = beta_divergence_deriv(x, y, b)
            np.testing.assert_array_equal(np.sign(d1), np.sign(y - x))


class TestDecompose:
    def test_convex_row_has_no_concave_part(self):
        parts = decompose(1.0, 1.0, 1.5)
        assert (parts.convex_val, parts.concave_val, parts.constant_val) == (0.0, 0.0, 0.0)

    def test_is_row(self):
        parts = decompose(1.0, 2.0, 0)
        assert parts.convex_val == pytest.approx(0.5)
        assert parts.concave_val == pytest.approx(math.log(2))
        assert parts.constant_val == pytest.approx(-1.0)

    def test_above_two_row(self):
        parts = decompose(1.0, 2.0, 3)
        assert parts.convex_val == pytest.approx(8 / 3)
        assert parts.concave_val == pytest.approx(-2.0)
        assert parts.constant_val == pytest.approx(1 / 6)

    @pytest.mark.parametrize("beta", BETAS + [-0.5, 0.75, 2.5])
    def test_parts_add_up(self, beta, rng):
        x = rng.uniform(0.01, 100, 1000)
        y = rng.uniform(0.01, 100, 1000)
        parts = decompose(x, y, beta)
        d = beta_divergence(x, y, beta)
        # relative to the size of the parts being summed
        scale = np.maximum.reduce([np.abs(parts.convex_val), np.abs(parts.concave_val), np.abs(parts.constant_val), d])
        assert np.all(np.abs(parts.total - d) <= 1e-12 * scale)
        d1, _ = beta_divergence_deriv(x, y, beta)
        dscale = np.maximum(np.abs(parts.convex_deriv), np.abs(parts.concave_deriv))
        assert np.all(np.abs(parts.convex_deriv + parts.concave_deriv - d1) <= 1e-10 * dscale)

    @pytest.mark.parametrize("beta", BETAS)
    def test_curvature_of_parts(self, beta):
        y = np.linspace(0.2, 5, 400)
        parts = decompose(1.3, y, beta)
        assert np.all(np.diff(parts.convex_val, 2) >= -1e-12)
        assert np.all(np.diff(parts.concave_val, 2) <= 1e-12)


class TestScalarAux:
    def test_tight(self):
        assert scalar_aux(2.0, 2.0, 1.0, 0.5) == pytest.approx(beta_divergence(1.0, 2.0, 0.5), rel=1e-14)

    def test_equals_divergence_on_convex_range(self):
        assert scalar_aux(1.0, 2.0, 1.0, 1.5) == 0.0

    def test_is_value(self):
        assert scalar_aux(3.0, 2.0, 1.0, 0) == pytest.approx(1 / 3 + math.log(2) + 0.5 - 1, rel=1e-14)

    @pytest.mark.parametrize("beta", BETAS + [0.25, 2.5])
    def test_majorizes(self, beta, rng):
        y = rng.uniform(0.05, 10, 2000)
        yt = rng.uniform(0.05, 10, 2000)
        x = rng.uniform(0.05, 10, 2000)
        assert np.all(scalar_aux(y, yt, x, beta) >= beta_divergence(x, y, beta) - 1e-10)
        np.testing.assert_allclose(scalar_aux(yt, yt, x, beta), beta_divergence(x, yt, beta), rtol=0, atol=1e-12 * 100)

    @pytest.mark.parametrize("beta", [0.0, 0.5, 1.0, 1.5, 2.0])
    def test_convex_in_y(self, beta):
        y = np.linspace(0.05, 8, 800)
        for yt, x in [(1.0, 2.0), (3.0, 0.5), (2.0, 2.0)]:
            g = scalar_aux(y, yt, x, beta)
            assert np.all(np.diff(g, 2) >= -1e-9)


class TestScale:
    @pytest.mark.parametrize("beta", BETAS)
    def test_unit_scale(self, beta):
        lhs, rhs = scale_check(1.0, 2.0, 1.0, beta)
        assert lhs == rhs

    def test_is_scale_invariant(self):
        lhs, rhs = scale_check(1.0, 2.0, 3.0, 0)
        assert lhs == pytest.approx(rhs, rel=1e-14)
        assert lhs == pytest.approx(beta_divergence(1.0, 2.0, 0), rel=1e-14)

    def test_euclidean_scales_quadratically(self):
        lhs, rhs = scale_check(1.0, 2.0, 2.0, 2)
        assert lhs == pytest.approx(4 * beta_divergence(1.0, 2.0, 2), rel=1e-15)
        assert lhs == pytest.approx(rhs, rel=1e-15)

    @pytest.mark.parametrize("beta", BETAS + [0.3, 2.7])
    def test_scale_law(self, beta, rng):
        x = rng.uniform(0.1, 10, 300)
        y = rng.uniform(0.1, 10, 300)
        lam = rng.uniform(0.1, 10, 300)
        lhs, rhs = scale_check(x, y, lam, beta)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10)


def test_eps_floor_env(monkeypatch):
    monkeypatch.delenv("BETA_NMF_EPS_FLOOR", raising=False)
    assert eps_floor() == 1e-12
    monkeypatch.setenv("BETA_NMF_EPS_FLOOR", "1e-9")
    assert eps_floor() == 1e-9
    monkeypatch.setenv("BETA_NMF_EPS_FLOOR", "-1")
    with pytest.raises(ValueError):
        eps_floor()
