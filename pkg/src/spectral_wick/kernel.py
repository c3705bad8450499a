"""Covariance kernel K_m and T_m inner products.

Normalisation: with the unitary Fourier transform,

    r(t) = ||T_m 1_t||^2 = (2/pi) int_0^inf (1 - cos t xi) m(xi) / xi^2 dxi,
    K_m(t, s) = (T_m 1_t, T_m 1_s) = sgn(t) sgn(s) (r(t) + r(s) - r(t - s)) / 2,

so m = 1 gives K(t, s) = min(t, s) for t, s > 0.
"""

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from ._quadrature import QuadratureError, graded_edges, merge_edges
from .operator_tm import (
    GridFunction,
    Window,
    bin_averaged_density,
    fft_spectra,
    is_smooth,
    smooth_spectrum,
)
from .spectral import half_line_edges, integrate_weighted


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """The Gram matrix did not factorise even with the largest jitter."""


class DivergenceError(ArithmeticError):
    """A spectral integral grows without bound as the cutoff is doubled."""


@dataclass(frozen=True)
class KernelConfig:
    freq_cutoff: float = 50.0
    abs_tol: float = 1e-12
    max_panels: int = 50000
    graded_mesh_levels: int = 60
    half_periods: int = 64

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if not self.freq_cutoff > 0:
            raise ValueError("freq_cutoff must be positive")


DEFAULT_CONFIG = KernelConfig()


def _oscillatory_edges(m, a, cfg):
    """Panel edges on [0, upper] for integrands oscillating like cos(a xi)."""
    knee = min(1.0, math.pi / a)
    if m.graded_at_zero:
        low = graded_edges(knee, cfg.graded_mesh_levels)
    else:
        low = np.array([0.0, knee])
    upper = max(cfg.freq_cutoff, cfg.half_periods * math.pi / a)
    upper = min(upper, m.support)
    n_half = int(math.floor(upper * a / math.pi))
    half = math.pi / a * np.arange(1, n_half + 1)
    n_dbl = max(0, int(math.ceil(math.log2(upper / knee)))) if upper > knee else 0
    dbl = knee * 2.0 ** np.arange(1, n_dbl + 1)
    return merge_edges(low, half, dbl, [upper], lo=0.0, hi=upper), upper


def _tail(func, lower, weight=None, wvar=None, tol=1e-13):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if weight is None:
                val, _ = integrate.quad(func, lower, np.inf, epsabs=tol, epsrel=1e-12, limit=200)
            else:
                val, _ = integrate.quad(func, lower, np.inf, weight=weight, wvar=wvar,
                                        epsabs=tol, limlst=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"tail integral from {lower:g} did not converge: {exc}") from exc
    return val


@lru_cache(maxsize=65536)
def _r_cached(m, a, cfg):
    edges, upper = _oscillatory_edges(m, a, cfg)
    weight = lambda x: 2.0 * np.sin(0.5 * a * x) ** 2 / (x * x)
    # coarse pass for the magnitude, then abs_tol scaled down for small r and
    # a 1e-13 relative floor for large r
    rough = abs(_r_terms(m, a, weight, edges, upper, 1e-6, cfg))
    tol = cfg.abs_tol / 4.0 * min(1.0, rough) + 1e-13 * rough
    total = _r_terms(m, a, weight, edges, upper, max(tol, 1e-300), cfg)
    return 2.0 / math.pi * total


def _r_terms(m, a, weight, edges, upper, tol, cfg):
    total = integrate_weighted(m, weight, edges, tol, cfg.max_panels)
    if upper < m.support:
        total += m.inverse_square_tail(upper)
        total -= _tail(lambda x: float(m(x)) / (x * x), upper, weight="cos", wvar=a, tol=tol)
    return total


MIN_TIME = 1e-120


class TimeRangeError(ValueError):
    """A nonzero time too small for the frequency meshes to resolve."""


def variance_r(m, t, cfg=DEFAULT_CONFIG):
    """``r(t) = ||T_m 1_t||^2``; even in ``t`` and zero at ``t = 0``.

    Nonzero ``|t|`` below :data:`MIN_TIME` raises :class:`TimeRangeError`.
    """
    a = abs(float(t))
    if a == 0.0:
        return 0.0
    if a < MIN_TIME:
        raise TimeRangeError(f"|t| = {a:g} is below the resolvable minimum {MIN_TIME:g}")
    return _r_cached(m, a, cfg)


def covariance(m, t, s, cfg=DEFAULT_CONFIG):
    """``K_m(t, s) = (T_m 1_t, T_m 1_s)``."""
    t = float(t)
    s = float(s)
    if t == 0.0 or s == 0.0:
        return 0.0
    sign = math.copysign(1.0, t) * math.copysign(1.0, s)
    return sign * 0.5 * (variance_r(m, t, cfg) + variance_r(m, s, cfg) - variance_r(m, t - s, cfg))


def inner_product_tm(m, f, g, pad_factor=4, dxi_max=0.02):
    """``(T_m f, T_m g)`` for real grid functions by the zero-padded FFT route.

    The frequency sum uses the bin average of m in every DFT bin, which
    keeps integrable singularities at xi = 0 finite.
    """
    xi, spectra, n_pad, step = fft_spectra([f, g], pad_factor, dxi_max)
    dxi = 2.0 * math.pi / (n_pad * step)
    mbar = bin_averaged_density(m, n_pad, step)
    terms = mbar * spectra[0] * np.conj(spectra[1]) * dxi
    value = complex(np.sum(terms))
    scale = float(np.sum(np.abs(terms))) or 1.0
    if abs(value.imag) > 1e-10 * scale:
        raise ArithmeticError(f"inner product has imaginary residue {value.imag:.3g}")
    return value.real


def _as_direction(x):
    if isinstance(x, (GridFunction, Window)):
        return x
    return Window(float(x))


def pairing(m, a, b, cfg=DEFAULT_CONFIG, grid_step=1e-3):
    """``(T_m a, T_m b)`` for times, windows or grid functions, by the most accurate route.

    Times and unweighted windows use the kernel; anything paired with a
    smooth grid function uses frequency quadrature against its exact
    transform; the rest falls back to :func:`inner_product_tm` on a grid of
    spacing ``grid_step`` (or the grid function's own step).
    """
    a = _as_direction(a)
    b = _as_direction(b)
    if isinstance(a, Window) and isinstance(b, Window) and a.f is None and b.f is None:
        return covariance(m, a.end, b.end, cfg)
    for x, y in ((a, b), (b, a)):
        if isinstance(x, GridFunction) and is_smooth(x):
            spec = smooth_spectrum(m, x)
            if isinstance(y, Window):
                return float(spec.pair_window(y))
            if y is x:
                return spec.norm2
            return spec.pair_smooth(y)
    step = next((x.step for x in (a, b) if isinstance(x, GridFunction)), None)
    if step is None:
        step = next((x.f.step for x in (a, b) if isinstance(x, Window) and x.f is not None), grid_step)
    fa = a if isinstance(a, GridFunction) else a.to_grid(step)
    fb = b if isinstance(b, GridFunction) else b.to_grid(step)
    return inner_product_tm(m, fa, fb)


@dataclass(frozen=True)
class GramMatrix:
    times: tuple
    values: np.ndarray
    jitter_used: float
    cholesky: np.ndarray


JITTER_LADDER = (0.0, 1e-14, 1e-12, 1e-10, 1e-8)


def factorize(values):
    """Lower Cholesky factor with the smallest jitter from the ladder that works."""
    values = np.asarray(values, dtype=float)
    scale = float(np.max(np.diag(values))) if values.size else 0.0
    for rel in JITTER_LADDER:
        jitter = rel * scale
        try:
            chol = np.linalg.cholesky(values + jitter * np.eye(values.shape[0]))
        except np.linalg.LinAlgError:
            continue
        return chol, jitter
    raise NotPositiveDefiniteError(
        f"matrix not positive definite with jitter up to {JITTER_LADDER[-1]:g} x max diagonal"
    )


def gram(m, times, cfg=DEFAULT_CONFIG):
    """Covariance matrix of ``B_m`` at sorted, distinct ``times``."""
    times = tuple(sorted(float(t) for t in times))
    if len(set(times)) != len(times):
        raise ValueError("gram times must be distinct")
    k = len(times)
    values = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            values[i, j] = values[j, i] = covariance(m, times[i], times[j], cfg)
    chol, jitter = factorize(values)
    return GramMatrix(times, values, jitter, chol)


def stationary_derivative_cov(m, tau, cfg=DEFAULT_CONFIG):
    """Covariance of the derivative process, ``d^2 K / dt ds`` at lag ``tau``.

    Equal to ``(1/pi) int_0^inf cos(tau xi) m(xi) dxi``; raises
    :class:`DivergenceError` when the integral of m is not finite.
    """
    a = abs(float(tau))
    if m.support == math.inf:
        whole = lambda upper: integrate_weighted(
            m, np.ones_like, half_line_edges(m, upper, cfg.graded_mesh_levels), cfg.abs_tol, cfg.max_panels)
        low, high = whole(cfg.freq_cutoff), whole(2.0 * cfg.freq_cutoff)
        if high - low > 1e-3 * abs(high) or not np.isfinite(high):
            raise DivergenceError(f"integral of {m.label} diverges; derivative process does not exist")
    if a == 0.0:
        edges = half_line_edges(m, min(m.support, cfg.freq_cutoff), cfg.graded_mesh_levels)
        head = integrate_weighted(m, np.ones_like, edges, cfg.abs_tol, cfg.max_panels)
        upper = edges[-1]
        if upper < m.support:
            head += _tail(lambda x: float(m(x)), upper, tol=cfg.abs_tol)
        return head / math.pi
    edges, upper = _oscillatory_edges(m, a, cfg)
    head = integrate_weighted(m, lambda x: np.cos(a * x), edges, cfg.abs_tol, cfg.max_panels)
    if upper < m.support:
        head += _tail(lambda x: float(m(x)), upper, weight="cos", wvar=a, tol=cfg.abs_tol)
    return head / math.pi

