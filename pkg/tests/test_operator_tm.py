import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_wick.kernel import covariance, inner_product_tm, pairing
from spectral_wick.operator_tm import (
    GridFunction,
    Window,
    apply_tm,
    domain_check,
    grid_norm2,
    indicator_fourier,
    is_smooth,
    smooth_spectrum,
)
from spectral_wick.spectral import band_limited, fractional, white

SQRT_2PI = math.sqrt(2 * math.pi)


def bump(c=0.0, w=1.0, step=None):
    return GridFunction.gaussian_bump(c, w, step=step)


def test_white_is_identity():
    f = bump(0.3, 0.7, step=0.02)
    g = apply_tm(white(), f)
    np.testing.assert_allclose(g(f.grid), f.samples, atol=1e-10)


def test_band_limited_passes_low_frequencies():
    # a bump of width 4 has |fhat| below 1e-16 beyond xi = 2.2, inside the band [-5, 5]
    f = bump(0.0, 4.0, step=0.05)
    g = apply_tm(band_limited(5.0), f)
    np.testing.assert_allclose(g(f.grid), f.samples, atol=1e-8)


def test_isometry_link():
    m = fractional(0.75)
    f = bump(0.0, 0.5, step=0.01)
    norm = grid_norm2(apply_tm(m, f))
    assert norm == pytest.approx(inner_product_tm(m, f, f), rel=1e-6)
    assert norm == pytest.approx(smooth_spectrum(m, f).norm2, rel=1e-4)


def test_plancherel_examples():
    fine = GridFunction.indicator(1.0, 1e-4)
    assert inner_product_tm(white(), fine, fine) == pytest.approx(1.0, abs=1e-4)
    # half-full end cells: the grid norm is t - step/2
    one = GridFunction.indicator(1.0, 1e-3)
    assert inner_product_tm(white(), one, one) == pytest.approx(1.0 - 5e-4, abs=1e-12)
    zero = GridFunction(0.0, 1e-3, np.zeros(50))
    assert inner_product_tm(fractional(0.3), one, zero) == 0.0


def test_disjoint_spectral_support():
    # modulated bump centred at xi = 20, far outside the band [-1, 1]
    f = GridFunction.sample(lambda u: np.exp(-u * u / 2) * np.cos(20 * u), -12, 12, 0.01)
    assert abs(inner_product_tm(band_limited(1.0), f, f)) < 1e-12


def test_domain_examples():
    one = GridFunction.indicator(1.0, 1e-3)
    rep = domain_check(white(), one)
    assert rep["in_domain"] and rep["weighted_norm"] == pytest.approx(1.0, abs=1e-3)
    assert domain_check(band_limited(2.0), one)["in_domain"]
    assert domain_check(fractional(0.9), one)["in_domain"]
    assert domain_check(white(), bump())["sufficient"]


def test_indicator_fourier_matches_quadrature():
    xi = np.array([0.0, 0.3, 2.0, -7.5])
    for t in (1.3, -0.8):
        lo, hi = sorted((0.0, t))
        u = np.linspace(lo, hi, 200001)
        direct = trapezoid(np.exp(-1j * np.outer(xi, u)), u, axis=1) / SQRT_2PI
        np.testing.assert_allclose(indicator_fourier(t, xi), direct, atol=1e-9)


def test_smooth_route_matches_kernel():
    m = fractional(0.75)
    s = bump(0.5, 0.25)
    assert is_smooth(s)
    sp = smooth_spectrum(m, s)
    # (T s, T 1_t) by FFT against the exact quadrature route
    fft = inner_product_tm(m, GridFunction.indicator(1.0, s.step), s)
    assert sp.pair_indicator(1.0) == pytest.approx(fft, abs=2e-4)
    assert pairing(m, s, Window(1.0)) == pytest.approx(float(sp.pair_indicator(1.0)), rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(t=st.floats(0.05, 3.0), h=st.floats(1e-4, 1e-3))
def test_indicator_derivative(t, h):
    sp = smooth_spectrum(white(), bump(1.0, 0.5))
    fd = (sp.pair_indicator(t + h) - sp.pair_indicator(t - h)) / (2 * h)
    # white noise: (s, 1_t) = int_0^t s, so the derivative is s(t)
    assert float(sp.pair_indicator_derivative(t)) == pytest.approx(math.exp(-2 * (t - 1) ** 2), abs=1e-9)
    assert float(fd) == pytest.approx(float(sp.pair_indicator_derivative(t)), abs=1e-6)


def test_fft_route_consistency_grid():
    for m in (white(), fractional(0.75), band_limited(1.0)):
        for t in (0.5, 1.5, 3.0):
            for s in (0.5, 2.0):
                fft = inner_product_tm(m, GridFunction.indicator(t, 1e-3), GridFunction.indicator(s, 1e-3))
                assert abs(fft - covariance(m, t, s)) < 1e-3


def test_grid_function_validation():
    with pytest.raises(ValueError):
        GridFunction(0.0, 0.0, [1.0])
    with pytest.raises(ValueError):
        GridFunction(0.0, 0.1, [np.nan])
    with pytest.raises(ValueError):
        Window(-1.0, bump())
