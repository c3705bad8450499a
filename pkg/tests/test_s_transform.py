import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_wick.operator_tm import Window
from spectral_wick.s_transform import (
    GrowthError,
    MissingColumnError,
    Probe,
    Route,
    UnsupportedTargetError,
    b_s,
    b_s_prime,
    direction_variance,
    gaussian_expectation,
    hermite_reconstruction,
    pair,
    s_closed,
    s_gaussian,
    s_monte_carlo,
    s_of_F,
    s_product_rule,
    standard_probes,
)
from spectral_wick.sampling import sample
from spectral_wick.spectral import band_limited, fractional, white
from spectral_wick.wick import WickExponential, WickPolynomial

PROBES = standard_probes()


def bump_integral(c, w, lo, hi):
    """Closed-form integral of exp(-(u-c)^2/(2w^2)) over [lo, hi]."""
    k = w * math.sqrt(2)
    return w * math.sqrt(math.pi / 2) * (math.erf((hi - c) / k) - math.erf((lo - c) / k))


def test_standard_probes():
    assert [p.label for p in PROBES] == ["bump(0,1)", "bump(1,0.5)", "bump(-1,0.5)", "bump(2,1)", "bump(0.5,0.25)"]


@pytest.mark.parametrize("t", [1.0, 0.3, 2.5, -0.7])
def test_white_b_s_is_overlap(t):
    m = white()
    for p, (c, w) in zip(PROBES, [(0, 1), (1, 0.5), (-1, 0.5), (2, 1), (0.5, 0.25)]):
        lo, hi = sorted((0.0, t))
        assert b_s(m, p, t) == pytest.approx(bump_integral(c, w, lo, hi), abs=1e-9)


def test_b_s_zero_and_finite_difference():
    for m in (white(), fractional(0.7), band_limited(1.0)):
        for p in PROBES:
            assert b_s(m, p, 0.0) == 0.0
            h = 1e-3
            fd = (b_s(m, p, 1 + h) - b_s(m, p, 1 - h)) / (2 * h)
            assert fd == pytest.approx(b_s_prime(m, p, 1.0), abs=1e-5)


def test_closed_form_examples():
    m, f = fractional(0.7), Window(1.0)
    v = direction_variance(m, f)
    for p in PROBES:
        a = pair(m, p, f)
        assert s_closed(m, 2.5, p).value == 2.5
        assert s_closed(m, WickPolynomial.basis(1, v), p, f).value == pytest.approx(a, rel=1e-15)
        assert s_closed(m, WickPolynomial.basis(2, v), p, f).value == pytest.approx(a * a, rel=1e-14)
        assert s_closed(m, WickExponential(v), p, f).value == pytest.approx(math.exp(a), rel=1e-15)
    with pytest.raises(UnsupportedTargetError):
        s_closed(m, "x", PROBES[0], f)


def test_gauss_hermite_examples():
    m = band_limited(1.0)
    for p in PROBES:
        a, v = b_s(m, p, 1.0), direction_variance(m, Window(1.0))
        assert s_of_F(m, None, 1.0, lambda x: x, p).value == pytest.approx(a, abs=1e-14)
        assert s_of_F(m, None, 1.0, lambda x: x * x, p).value == pytest.approx(a * a + v, abs=1e-13)
        assert s_of_F(m, None, 1.0, np.exp, p).value == pytest.approx(math.exp(a + v / 2), rel=1e-13)
        assert s_of_F(m, None, 1.0, np.exp, p).route is Route.GAUSS_QUADRATURE
    with pytest.raises(ValueError):
        s_of_F(m, None, 1.0, np.exp, PROBES[0], order=32)
    with pytest.raises(GrowthError):
        s_of_F(m, None, 1.0, lambda x: np.exp(x**4), PROBES[0])


@settings(max_examples=30, deadline=None)
@given(mean=st.floats(-3, 3), var=st.floats(0, 4), k=st.integers(0, 8))
def test_gaussian_moments(mean, var, k):
    # E X^k for X ~ N(mean, var) by the Hermite-coefficient formula
    exact = sum(math.comb(k, 2 * j) * mean ** (k - 2 * j) * var**j * math.prod(range(1, 2 * j, 2))
                for j in range(k // 2 + 1))
    assert gaussian_expectation(lambda x: x**k, mean, var) == pytest.approx(exact, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("m", [white(), fractional(0.7), band_limited(1.0)], ids=lambda m: m.label)
def test_hermite_reconstruction(m):
    for p in PROBES:
        for n in range(5):
            rebuilt, direct = hermite_reconstruction(m, Window(1.5), n, p)
            assert abs(rebuilt - direct) < 1e-8


def test_zero_probe_gives_expectations():
    z, m, f = Probe.zero(), fractional(0.7), Window(1.0)
    assert z.is_zero
    v = direction_variance(m, f)
    assert s_closed(m, WickPolynomial.basis(0, v), z, f).value == 1
    for n in range(1, 5):
        assert s_closed(m, WickPolynomial.basis(n, v), z, f).value == 0
    assert s_gaussian(m, f, lambda x: x * x, z).value == pytest.approx(v, rel=1e-14)


def test_injectivity_proxy():
    m, f = white(), Window(1.0)
    v = direction_variance(m, f)
    gaps = [abs(s_closed(m, WickPolynomial.basis(1, v), p, f).value - s_closed(m, WickPolynomial.basis(2, v), p, f).value)
            for p in PROBES]
    assert max(gaps) > 1e-3


def test_product_rule_examples():
    m = fractional(0.7)
    f, g = Window(1.0), Window(2.0)
    zero = Probe.zero()
    p = PROBES[1]
    assert s_product_rule(m, f, None, p) == pytest.approx(math.exp(pair(m, p, f)), rel=1e-15)
    assert s_product_rule(m, f, f, p) == pytest.approx(
        math.exp(direction_variance(m, f) + 2 * pair(m, p, f)), rel=1e-13)
    from spectral_wick.kernel import covariance
    assert s_product_rule(m, f, g, zero) == pytest.approx(math.exp(covariance(m, 1.0, 2.0)), rel=1e-13)


@pytest.mark.slow
def test_monte_carlo_routes():
    m, f = white(), Window(1.0)
    v = direction_variance(m, f)
    e = sample(m, [1.0, 2.0], 100_000, seed=17, directions=[p.s for p in PROBES])
    x = e.paths[:, 0]
    targets = [(lambda y: np.ones_like(y), lambda a: 1.0), (lambda y: y, lambda a: a),
               (lambda y: y * y, lambda a: a * a + v), (lambda y: y * y - v, lambda a: a * a),
               (np.cos, lambda a: math.exp(-v / 2) * math.cos(a)),
               (lambda y: np.exp(y - v / 2), math.exp)]
    for p in PROBES:
        a = pair(m, p, f)
        for F, closed in targets:
            mc = s_monte_carlo(m, e, F(x), p)
            assert abs(mc.value - closed(a)) < 4 * mc.stderr + 1e-15
        # the product of two Wick exponentials against the triple-product form
        wick_pair = np.exp(x - v / 2) * np.exp(e.paths[:, 1] - 1.0)
        mc = s_monte_carlo(m, e, wick_pair, p)
        assert abs(mc.value - s_product_rule(m, f, Window(2.0), p)) < 4 * mc.stderr
    with pytest.raises(MissingColumnError):
        s_monte_carlo(m, sample(m, [1.0], 10, seed=0), np.ones(10), PROBES[0])
