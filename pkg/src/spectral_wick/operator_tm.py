"""Grid functions and the Fourier multiplier T_m.

Two numerical routes live here:

* the FFT route (:func:`fft_spectra`, :func:`apply_tm`, :func:`domain_check`)
  works for any sampled function, including indicators, at the accuracy of a
  zero-padded DFT with bin-averaged multipliers;
* :class:`SmoothSpectrum` evaluates the Fourier transform of a smooth,
  rapidly decaying grid function directly at Gauss-Legendre frequency nodes,
  which gives near machine-precision pairings against indicators and windows
  whose transforms are known in closed form.

The Fourier transform is unitary: ``fhat(xi) = (2 pi)^-1/2 int e^{-i xi t} f(t) dt``.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from ._quadrature import gauss_legendre, merge_edges
from .spectral import density_rule, half_line_edges

SQRT_2PI = math.sqrt(2.0 * math.pi)


class DomainError(ValueError):
    """The function is not numerically in the domain of T_m."""


class GridResolutionError(ValueError):
    """The frequency grid cannot resolve the multiplier."""


class NotSmoothError(ValueError):
    """The sampled function's spectrum does not decay before the grid's Nyquist frequency."""


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A function sampled at ``start + k*step``, ``k = 0..n-1``.

    Outside the sampled range the function is zero. Between samples it is
    the cubic spline through the samples; this matters only for windows
    (:class:`Window`) and time-domain integrands.
    """

    start: float
    step: float
    samples: np.ndarray
    label: str = ""
    spectral: bool = False
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=complex if self.spectral else float)
        if not self.step > 0:
            raise ValueError("step must be positive")
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def sample(cls, func, start, stop, step, label=""):
        n = int(round((stop - start) / step)) + 1
        grid = start + step * np.arange(n)
        return cls(start, step, np.asarray(func(grid), dtype=float), label)

    @classmethod
    def indicator(cls, t, step, start=None, stop=None, label=None):
        """Cell-averaged indicator of ``[0, t)`` (or ``[t, 0)`` for ``t < 0``).

        Sample ``k`` is the fraction of the cell ``[x_k - step/2, x_k + step/2)``
        covered by the interval. Cells straddling an endpoint are half full,
        so the grid norm undershoots ``|t|`` by about ``step/2``.
        """
        lo, hi = (0.0, t) if t >= 0 else (t, 0.0)
        if start is None:
            start = step * math.floor(lo / step) - step
        if stop is None:
            stop = step * math.ceil(hi / step) + step
        n = int(round((stop - start) / step)) + 1
        centres = start + step * np.arange(n)
        left = np.maximum(centres - 0.5 * step, lo)
        right = np.minimum(centres + 0.5 * step, hi)
        frac = np.clip(right - left, 0.0, None) / step
        return cls(start, step, frac, label if label is not None else f"1_{t:g}")

    @classmethod
    def gaussian_bump(cls, centre, width, step=None, half_span=10.0, label=None):
        """``exp(-(u-centre)^2 / (2 width^2))`` sampled finely enough to be spectrally exact."""
        step = width / 20.0 if step is None else step
        lo = centre - half_span * width
        n = int(math.ceil(2.0 * half_span * width / step)) + 1
        grid = lo + step * np.arange(n)
        vals = np.exp(-0.5 * ((grid - centre) / width) ** 2)
        return cls(lo, step, vals, label if label is not None else f"bump({centre:g},{width:g})")

    @classmethod
    def constant(cls, value, start, stop, step, label=None):
        n = int(round((stop - start) / step)) + 1
        return cls(start, step, np.full(n, float(value)), label if label is not None else f"const({value:g})")

    @property
    def n(self):
        return self.samples.size

    @property
    def grid(self):
        return self.start + self.step * np.arange(self.n)

    @property
    def end(self):
        return self.start + self.step * (self.n - 1)

    def spline(self):
        sp = self._cache.get("spline")
        if sp is None:
            if self.n < 4:
                raise ValueError("need at least 4 samples to interpolate")
            sp = CubicSpline(self.grid, self.samples.real)
            self._cache["spline"] = sp
        return sp

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.start - 1e-12 * self.step) & (t <= self.end + 1e-12 * self.step)
        return np.where(inside, self.spline()(np.clip(t, self.start, self.end)), 0.0)

    def masked(self, lo, hi, label=None):
        """Cell-overlap weighted restriction to ``[lo, hi)``."""
        centres = self.grid
        left = np.maximum(centres - 0.5 * self.step, lo)
        right = np.minimum(centres + 0.5 * self.step, hi)
        frac = np.clip(right - left, 0.0, None) / self.step
        return GridFunction(self.start, self.step, self.samples.real * frac,
                            label if label is not None else f"1[{lo:g},{hi:g}){self.label}")

    def fourier(self, xi, chunk=256):
        """Unitary Fourier transform of the samples (trapezoid sum) at arbitrary ``xi``."""
        xi = np.asarray(xi, dtype=float)
        flat = xi.ravel()
        out = np.empty(flat.shape, dtype=complex)
        grid = self.grid
        scale = self.step / SQRT_2PI
        for i in range(0, flat.size, chunk):
            block = flat[i:i + chunk]
            out[i:i + chunk] = scale * (np.exp(-1j * np.outer(block, grid)) @ self.samples)
        return out.reshape(xi.shape)


@dataclass(frozen=True)
class Window:
    """``1_{[0, end]} f`` for ``end >= 0``; ``f=None`` stands for the constant 1.

    With ``f=None`` a negative ``end`` is allowed and means the indicator of
    ``[end, 0]``.
    """

    end: float
    f: Optional[GridFunction] = None

    def __post_init__(self):
        if self.f is not None:
            if self.end < 0:
                raise ValueError("weighted windows need end >= 0")
            if self.f.start > 1e-12 or self.f.end < self.end - 1e-12:
                raise ValueError(f"window function {self.f.label!r} does not cover [0, {self.end}]")

    @property
    def label(self):
        return f"1_{self.end:g}" + ("" if self.f is None else f"*{self.f.label}")

    def to_grid(self, step):
        if self.f is None:
            return GridFunction.indicator(self.end, step)
        if abs(step - self.f.step) > 1e-12 * step:
            raise ValueError("window grid must use the function's own step")
        return self.f.masked(0.0, self.end)


def indicator_fourier(t, xi):
    """Closed-form transform of the indicator of ``[0, t]`` (``[t, 0]`` if ``t < 0``)."""
    xi = np.asarray(xi, dtype=float)
    t = np.asarray(t, dtype=float)
    z = xi * t
    with np.errstate(invalid="ignore", divide="ignore"):
        val = (np.sin(z) - 2j * np.sin(0.5 * z) ** 2) / xi
    val = np.where(xi == 0.0, t + 0j, val)
    return np.sign(t) * val / SQRT_2PI


# ---------------------------------------------------------------- FFT route

DEFAULT_PAD = 4
DEFAULT_DXI = 0.02


def _padded_length(n_span, step, pad_factor, dxi_max):
    need = max(pad_factor * n_span, int(math.ceil(2.0 * math.pi / (step * dxi_max))))
    return 1 << max(0, (need - 1).bit_length())


@lru_cache(maxsize=32)
def bin_averaged_density(m, n_pad, step):
    """Average of m over each DFT bin, in ``np.fft.fftfreq`` order."""
    dxi = 2.0 * math.pi / (n_pad * step)
    xi = 2.0 * math.pi * np.fft.fftfreq(n_pad, d=step)
    avg = m.integral(xi - 0.5 * dxi, xi + 0.5 * dxi) / dxi
    avg.setflags(write=False)
    return avg


def fft_spectra(functions, pad_factor=DEFAULT_PAD, dxi_max=DEFAULT_DXI):
    """Transforms of grid functions on one common zero-padded frequency grid.

    All functions must share ``step`` and lie on a common lattice. Returns
    ``(xi, spectra, n_pad, step)`` with ``spectra`` of shape ``(len(functions), n_pad)``.
    """
    step = functions[0].step
    for f in functions:
        if abs(f.step - step) > 1e-12 * step:
            raise ValueError("grid functions must share a common step")
    origin = min(f.start for f in functions)
    offsets = []
    for f in functions:
        k = (f.start - origin) / step
        if abs(k - round(k)) > 1e-6:
            raise ValueError("grid functions are not aligned on a common lattice")
        offsets.append(int(round(k)))
    span = max(o + f.n for o, f in zip(offsets, functions))
    n_pad = _padded_length(span, step, pad_factor, dxi_max)
    xi = 2.0 * math.pi * np.fft.fftfreq(n_pad, d=step)
    buf = np.zeros((len(functions), n_pad), dtype=complex)
    for row, (o, f) in enumerate(zip(offsets, functions)):
        buf[row, o:o + f.n] = f.samples
    spectra = np.fft.fft(buf, axis=1) * (step / SQRT_2PI) * np.exp(-1j * xi * origin)
    return xi, spectra, n_pad, step


def apply_tm(m, f, pad_factor=DEFAULT_PAD, dxi_max=DEFAULT_DXI):
    """T_m f on the zero-padded grid, as a real :class:`GridFunction`.

    The multiplier in each DFT bin is the square root of the bin average of
    m, so the discrete isometry ``||T_m f||^2 = sum mbar |fhat|^2 dxi`` holds
    exactly and integrable singularities at 0 never produce a spike.
    """
    xi, spectra, n_pad, step = fft_spectra([f], pad_factor, dxi_max)
    dxi = 2.0 * math.pi / (n_pad * step)
    if m.support < math.inf and dxi > 0.25 * m.support:
        raise GridResolutionError(
            f"frequency bin {dxi:.3g} too coarse for band edge {m.support:g}; increase dxi resolution"
        )
    if not domain_check(m, f, pad_factor, dxi_max)["in_domain"]:
        raise DomainError(f"{f.label!r} is not numerically in the domain of T_{m.label}")
    mult = np.sqrt(bin_averaged_density(m, n_pad, step))
    raw = np.fft.ifft(np.fft.fft(np.concatenate((f.samples, np.zeros(n_pad - f.n)))) * mult)
    scale = np.max(np.abs(raw)) or 1.0
    if np.max(np.abs(raw.imag)) > 1e-9 * scale:
        raise RuntimeError("T_m f has a non-negligible imaginary part for real input")
    shift = (n_pad - f.n) // 2
    out = np.roll(raw.real, shift)
    return GridFunction(f.start - shift * step, step, out, f"T[{m.label}]{f.label}")


def grid_norm2(f):
    return float(f.step * np.sum(np.abs(f.samples) ** 2))


def domain_check(m, f, pad_factor=DEFAULT_PAD, dxi_max=DEFAULT_DXI):
    """Numerical membership test for the domain of T_m.

    Compares the weighted spectral energy up to half the Nyquist frequency
    with the energy up to Nyquist. ``sufficient`` reports whether
    ``(1+xi^2)|fhat|^2`` stays bounded (it may grow by at most 50% between the
    two bands).
    """
    xi, spectra, n_pad, step = fft_spectra([f], pad_factor, dxi_max)
    dxi = 2.0 * math.pi / (n_pad * step)
    power = np.abs(spectra[0]) ** 2
    weighted = bin_averaged_density(m, n_pad, step) * power * dxi
    cutoff = 0.5 * math.pi / step
    low = np.abs(xi) <= cutoff
    w_low = float(np.sum(weighted[low]))
    w_all = float(np.sum(weighted))
    in_domain = bool(np.isfinite(w_all)) and abs(w_all - w_low) <= 1e-3 * abs(w_all)
    envelope = (1.0 + xi**2) * power
    s_low = float(np.max(envelope[low]))
    s_all = float(np.max(envelope))
    sufficient = bool(np.isfinite(s_all)) and s_all <= 1.5 * s_low + 1e-300
    return {"in_domain": in_domain, "weighted_norm": w_all, "sufficient": sufficient}


# ---------------------------------------------------------------- smooth route

class SmoothSpectrum:
    """Frequency-quadrature representation of ``T_m s`` for a smooth grid function ``s``.

    The transform of ``s`` is evaluated once at composite Gauss-Legendre
    nodes on ``(0, xi_max]``, where ``xi_max`` is the frequency beyond which
    ``|shat|`` is below 1e-13 of its peak. Pairings with any function whose
    transform is available at those nodes then cost one weighted sum.
    """

    def __init__(self, m, s, order=12, max_width=0.25):
        self.m = m
        self.s = s
        self.xi_max = smooth_cutoff(s)
        edges = half_line_edges(m, min(self.xi_max, m.support))
        edges = _refine(edges, max_width)
        self.nodes, weights = density_rule(m, edges, order)
        # real functions: integral over R is twice the real part of the half-line
        self.weights = 2.0 * weights
        self.shat = s.fourier(self.nodes)
        self._wshat = self.weights * self.shat
        self._windows = {}

    def pair_spectrum(self, ghat):
        """``(T_m s, T_m g)`` given ``ghat`` at :attr:`nodes` (leading axis)."""
        return np.real(np.tensordot(self._wshat, np.conj(ghat), axes=(0, 0)))

    @property
    def norm2(self):
        return float(np.real(np.sum(self._wshat * np.conj(self.shat))))

    def pair_indicator(self, t):
        """``(T_m s, T_m 1_t)`` for scalar or array ``t``."""
        t = np.asarray(t, dtype=float)
        ghat = indicator_fourier(t.ravel()[None, :], self.nodes[:, None])
        return self.pair_spectrum(ghat).reshape(t.shape)

    def pair_indicator_derivative(self, t):
        """d/dt of :meth:`pair_indicator`."""
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        sign = np.where(flat < 0.0, -1.0, 1.0)
        dhat = sign * np.exp(-1j * np.outer(self.nodes, flat)) / SQRT_2PI
        return self.pair_spectrum(dhat).reshape(t.shape)

    def pair_smooth(self, g):
        return float(self.pair_spectrum(g.fourier(self.nodes)))

    def pair_window(self, window, t=None):
        """``(T_m s, T_m 1_t f)`` for a window; ``t`` overrides ``window.end`` (may be an array)."""
        ends = window.end if t is None else t
        if window.f is None:
            return self.pair_indicator(ends)
        return self._window_primitive(window.f).pair(self, ends)

    def pair_window_derivative(self, window, t):
        """d/dt ``(T_m s, T_m 1_t f) = f(t) (T_m s, T_m 1_t)'``."""
        base = self.pair_indicator_derivative(t)
        if window.f is None:
            return base
        return window.f(np.asarray(t, dtype=float)) * base

    def _window_primitive(self, f):
        prim = self._windows.get(id(f))
        if prim is None:
            prim = _CumulativeFourier(f, self.nodes)
            self._windows[id(f)] = prim
        return prim


class _CumulativeFourier:
    """Running transforms ``int_0^t f(u) e^{-i xi u} du / sqrt(2 pi)`` of a spline."""

    ORDER = 8

    def __init__(self, f, nodes):
        knots = f.grid
        knots = np.concatenate(([0.0], knots[knots > 0.0]))
        self.f = f
        self.knots = knots
        self.nodes = nodes
        x, w = gauss_legendre(self.ORDER)
        lo, hi = knots[:-1], knots[1:]
        half = 0.5 * (hi - lo)
        u = lo[:, None] + half[:, None] * (x + 1.0)
        fu = f(u) * (half[:, None] * w)
        seg = np.zeros((nodes.size, lo.size), dtype=complex)
        for k in range(self.ORDER):
            seg += fu[:, k] * np.exp(-1j * np.outer(nodes, u[:, k]))
        self.cumulative = np.concatenate((np.zeros((nodes.size, 1), complex), np.cumsum(seg, axis=1)), axis=1)

    def transform(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0.0) or np.any(t > self.knots[-1] + 1e-12):
            raise ValueError("window end outside the sampled range of f")
        idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, self.knots.size - 2)
        x, w = gauss_legendre(self.ORDER)
        lo = self.knots[idx]
        half = 0.5 * (t - lo)
        u = lo[:, None] + half[:, None] * (x + 1.0)
        fu = self.f(u) * (half[:, None] * w)
        partial = np.zeros((self.nodes.size, t.size), dtype=complex)
        for k in range(self.ORDER):
            partial += fu[:, k] * np.exp(-1j * np.outer(self.nodes, u[:, k]))
        return (self.cumulative[:, idx] + partial) / SQRT_2PI

    def pair(self, spectrum, t):
        t_arr = np.asarray(t, dtype=float)
        out = spectrum.pair_spectrum(self.transform(t_arr.ravel()))
        return out.reshape(t_arr.shape)


def smooth_cutoff(s, rel=1e-13, n_scan=2048):
    """Frequency beyond which ``|shat|`` stays below ``rel`` of its peak."""
    cache_key = ("cutoff", rel)
    if cache_key in s._cache:
        return s._cache[cache_key]
    nyquist = math.pi / s.step
    scan = np.linspace(0.0, nyquist, n_scan)
    mag = np.abs(s.fourier(scan))
    peak = mag.max()
    if peak == 0.0:
        cutoff = 1.0
    else:
        above = np.nonzero(mag > rel * peak)[0]
        last = above[-1]
        if last >= int(0.9 * n_scan):
            raise NotSmoothError(
                f"spectrum of {s.label!r} has not decayed by the Nyquist frequency {nyquist:.3g}"
            )
        cutoff = max(1.0, 1.1 * scan[min(last + 1, n_scan - 1)])
    s._cache[cache_key] = cutoff
    return cutoff


def is_smooth(f):
    try:
        smooth_cutoff(f)
    except NotSmoothError:
        return False
    return True


def _refine(edges, max_width):
    pieces = [edges[:1]]
    for lo, hi in zip(edges[:-1], edges[1:]):
        k = max(1, int(math.ceil((hi - lo) / max_width)))
        pieces.append(np.linspace(lo, hi, k + 1)[1:])
    return merge_edges(*pieces)


def smooth_spectrum(m, s):
    """Cached :class:`SmoothSpectrum` of ``s`` under density ``m``."""
    key = ("smooth", m)
    spec = s._cache.get(key)
    if spec is None:
        spec = SmoothSpectrum(m, s)
        s._cache[key] = spec
    return spec
