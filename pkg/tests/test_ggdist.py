import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from ggopt import ggdist
from ggopt.ggdist import GGParams

GAUSS = GGParams(0.0, math.sqrt(2.0), 2.0)
LAPLACE = GGParams(0.0, 1.0, 1.0)


class TestGamma:
    @pytest.mark.parametrize("x, expected", [(1, 1.0), (0.5, math.sqrt(math.pi)), (6, 120.0)])
    def test_known_values(self, x, expected):
        assert ggdist.gamma_fn(x) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("x", [0.05, 0.1, 0.33, 1.7, 4.2, 11.5, 29.9])
    def test_against_mpmath(self, x):
        assert ggdist.gamma_fn(x) == pytest.approx(float(mpmath.gamma(x)), rel=1e-10)

    def test_array(self):
        np.testing.assert_allclose(ggdist.gamma_fn(np.array([1.0, 2.0, 5.0])), [1, 1, 24])

    @pytest.mark.parametrize("x", [0, -1.5])
    def test_domain(self, x):
        with pytest.raises(ValueError):
            ggdist.gamma_fn(x)


class TestParams:
    @pytest.mark.parametrize("args", [(0, 0, 1), (0, 1, 0), (float("inf"), 1, 1), (0, -1, 2)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            GGParams(*args)


def test_pdf_peaks():
    assert ggdist.pdf(0.0, GAUSS) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-14)
    assert ggdist.pdf(0.0, LAPLACE) == pytest.approx(0.5, rel=1e-14)


def test_pdf_direct_evaluation():
    # mpmath at 40 digits
    assert ggdist.pdf(1.3, GGParams(0.2, 0.7, 0.5)) == pytest.approx(0.10195887245476392, rel=1e-12)


@pytest.mark.parametrize("nu", [0.3, 0.5, 1.0, 2.0, 4.0])
def test_pdf_integrates_to_one_and_matches_variance(nu):
    p = GGParams(0.0, 0.9, nu)
    f = lambda t: ggdist.pdf(t, p)
    pts = [0, 1, 10, 100]
    mass = 2 * sum(integrate.quad(f, a, b, epsabs=1e-13, limit=200)[0] for a, b in zip(pts, pts[1:]))
    mass += 2 * integrate.quad(f, 100, np.inf)[0]
    assert mass == pytest.approx(1.0, abs=1e-6)
    m2 = 2 * sum(integrate.quad(lambda t: t * t * f(t), a, b, epsabs=1e-13, limit=200)[0]
                 for a, b in zip(pts, pts[1:]))
    m2 += 2 * integrate.quad(lambda t: t * t * f(t), 100, np.inf)[0]
    assert ggdist.variance(p) == pytest.approx(m2, abs=1e-6)


@given(t=st.floats(0, 50), mu=st.floats(-5, 5), beta=st.floats(0.05, 5), nu=st.floats(0.1, 8))
def test_pdf_symmetric(t, mu, beta, nu):
    p = GGParams(mu, beta, nu)
    a, b = ggdist.pdf(mu + t, p), ggdist.pdf(mu - t, p)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


def test_cdf_matches_quadrature():
    p = GGParams(0.3, 0.8, 0.7)
    val = integrate.quad(lambda t: ggdist.pdf(t, p), -np.inf, 1.1)[0]
    assert ggdist.cdf(1.1, p) == pytest.approx(val, abs=1e-8)
    assert ggdist.cdf(p.mu, p) == 0.5


def test_variance_examples():
    assert ggdist.variance(LAPLACE) == pytest.approx(2.0)
    assert ggdist.variance(GAUSS) == pytest.approx(1.0)
    assert ggdist.variance(GGParams(0, 0.8, 0.5)) == pytest.approx(76.8)


def test_beta_from_sigma_examples():
    assert ggdist.beta_from_sigma(1, 2) == pytest.approx(math.sqrt(2))
    assert ggdist.beta_from_sigma(1, 1) == pytest.approx(1 / math.sqrt(2))
    assert ggdist.beta_from_sigma(0.5, 0.5) == pytest.approx(0.5 / math.sqrt(120))
    with pytest.raises(ValueError):
        ggdist.beta_from_sigma(0, 1)
    with pytest.raises(ValueError):
        ggdist.beta_from_sigma(1, -1)


@given(sigma=st.floats(1e-3, 1e3), nu=st.floats(0.05, 10))
def test_beta_from_sigma_inverts_variance(sigma, nu):
    p = GGParams(0.0, ggdist.beta_from_sigma(sigma, nu), nu)
    assert ggdist.variance(p) == pytest.approx(sigma * sigma, rel=1e-12)


class TestSample:
    def test_gaussian_variance(self):
        x = ggdist.sample(GAUSS, 10**6, np.random.default_rng(7))
        assert x.var() == pytest.approx(1.0, rel=0.02)

    def test_location_shift(self):
        x = ggdist.sample(GGParams(3, 1, 1), 10**6, np.random.default_rng(7))
        assert x.mean() == pytest.approx(3.0, rel=0.01)

    def test_absolute_moment(self):
        x = ggdist.sample(GGParams(0, 1, 0.5), 10**6, np.random.default_rng(7))
        assert np.abs(x).mean() == pytest.approx(6.0, rel=0.02)

    def test_deterministic(self):
        a = ggdist.sample(LAPLACE, 1000, np.random.default_rng(3))
        b = ggdist.sample(LAPLACE, 1000, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_count(self):
        with pytest.raises(ValueError):
            ggdist.sample(LAPLACE, 0, np.random.default_rng(0))


class TestFitShape:
    def test_moment_ratio_known(self):
        assert ggdist.moment_ratio(2.0) == pytest.approx(2 / math.pi)
        assert ggdist.moment_ratio(1.0) == pytest.approx(0.5)

    def test_gaussian(self):
        rep = ggdist.fit_shape(np.random.default_rng(1).standard_normal(10**6))
        assert 1.8 <= rep.params.nu <= 2.2
        assert rep.sample_count == 10**6
        assert 0 <= rep.goodness <= 2

    def test_laplace(self):
        rep = ggdist.fit_shape(np.random.default_rng(1).laplace(0, 1, 10**6))
        assert 0.9 <= rep.params.nu <= 1.1

    @pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
    def test_round_trip(self, nu):
        x = ggdist.sample(GGParams(0.0, 1.0, nu), 10**6, np.random.default_rng(11))
        rep = ggdist.fit_shape(x)
        assert rep.params.nu == pytest.approx(nu, rel=0.10)
        assert ggdist.variance(rep.params) == pytest.approx(x.var(), rel=1e-9)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            ggdist.fit_shape(np.ones(10))

    def test_zero_variance(self):
        with pytest.raises(ValueError):
            ggdist.fit_shape(np.ones(2000))

    def test_out_of_band_reports_bound(self):
        # two-point data has |x - mu| constant, ratio 1 > M(10)
        x = np.tile([-1.0, 1.0], 1000)
        with pytest.raises(ggdist.GGFitError) as exc:
            ggdist.fit_shape(x)
        assert exc.value.bound == ggdist.NU_MAX


class TestEntropy:
    def test_gaussian(self):
        assert ggdist.differential_entropy(GAUSS) == pytest.approx(0.5 * math.log2(2 * math.pi * math.e))

    def test_laplace(self):
        assert ggdist.differential_entropy(LAPLACE) == pytest.approx(math.log2(2 * math.e))

    def test_low_shape_against_quadrature(self):
        # -int f log2 f by mpmath quadrature: 2/ln2 + 2
        assert ggdist.differential_entropy(GGParams(0, 1, 0.5)) == pytest.approx(4.885390081777927, rel=1e-12)
