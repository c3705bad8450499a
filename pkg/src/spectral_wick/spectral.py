"""Spectral densities m(xi) and their admissibility checks.

A density is an even, nonnegative weight on the frequency axis. Four
closed-form families are built in; anything else can be wrapped with
:func:`custom` after a cheap evenness/positivity spot check.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from ._quadrature import (
    QuadratureError,
    adaptive_panels,
    gauss_legendre,
    graded_edges,
    merge_edges,
    panel_rule,
)


class ParameterError(ValueError):
    """A density parameter is outside its admissible range."""


class DensityValidationError(ValueError):
    """A user-supplied density failed the evenness/nonnegativity spot check."""


class DensityKind(str, enum.Enum):
    WHITE = "white"
    BAND_LIMITED = "band_limited"
    FRACTIONAL = "fractional"
    BAND_LIMITED_FRACTIONAL = "band_limited_fractional"
    CUSTOM = "custom"


@dataclass(frozen=True)
class SpectralDensity:
    """Even nonnegative spectral density.

    Instances are immutable and hashable, so kernel values can be memoised
    per density. Use the module-level constructors rather than building
    these directly.
    """

    kind: DensityKind
    H: Optional[float] = None
    bandwidth: Optional[float] = None
    func: Optional[Callable] = field(default=None, compare=True, repr=False)
    name: str = ""

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        ax = np.abs(xi)
        if self.kind is DensityKind.WHITE:
            return np.ones_like(ax)
        if self.kind is DensityKind.BAND_LIMITED:
            return (ax <= self.bandwidth).astype(float)
        if self.kind in (DensityKind.FRACTIONAL, DensityKind.BAND_LIMITED_FRACTIONAL):
            with np.errstate(divide="ignore"):
                out = ax ** (1.0 - 2.0 * self.H)
            if self.kind is DensityKind.BAND_LIMITED_FRACTIONAL:
                out = np.where(ax <= self.bandwidth, out, 0.0)
            return out
        return np.asarray(self.func(xi), dtype=float)

    @property
    def support(self):
        """Half-width of the support; ``inf`` for unbounded densities."""
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return math.inf

    @property
    def graded_at_zero(self):
        """Whether quadrature near xi=0 needs a geometrically graded mesh."""
        if self.kind in (DensityKind.FRACTIONAL, DensityKind.BAND_LIMITED_FRACTIONAL):
            return self.H != 0.5
        return self.kind is DensityKind.CUSTOM

    @property
    def label(self):
        if self.name:
            return self.name
        params = []
        if self.H is not None:
            params.append(f"H={self.H:g}")
        if self.bandwidth is not None:
            params.append(f"Delta={self.bandwidth:g}")
        if not params:
            return self.kind.value
        return f"{self.kind.value}({','.join(params)})"

    def to_config(self):
        out = {"kind": self.kind.value}
        if self.H is not None:
            out["H"] = self.H
        if self.bandwidth is not None:
            out["Delta"] = self.bandwidth
        if self.kind is DensityKind.CUSTOM:
            out["name"] = self.name
        return out

    def integral(self, a, b):
        """Integral of m over ``[a, b]`` (elementwise for array endpoints).

        Exact for the built-in families; custom densities fall back to
        graded Gauss-Legendre.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind is DensityKind.CUSTOM:
            return np.vectorize(self._custom_integral, otypes=[float])(a, b)
        return self._antiderivative(b) - self._antiderivative(a)

    def _antiderivative(self, x):
        # odd primitive of m, M(0) = 0
        delta = self.support
        ax = np.minimum(np.abs(x), delta)
        if self.kind in (DensityKind.WHITE, DensityKind.BAND_LIMITED):
            return np.sign(x) * ax
        p = 2.0 - 2.0 * self.H
        return np.sign(x) * ax**p / p

    def inverse_square_tail(self, lower):
        """``int_lower^inf m(x) / x^2 dx`` for ``lower > 0``."""
        upper = self.support
        if lower >= upper:
            return 0.0
        if self.kind is DensityKind.CUSTOM:
            # y = lower / x maps the tail onto (0, 1]
            edges = graded_edges(1.0, 60)
            val, _, _ = adaptive_panels(lambda y: self(lower / y), edges, 1e-14)
            return val / lower
        p = 0.0 if self.H is None else 1.0 - 2.0 * self.H
        out = lower ** (p - 1.0) / (1.0 - p)
        if upper < math.inf:
            out -= upper ** (p - 1.0) / (1.0 - p)
        return out

    def _custom_integral(self, a, b):
        if a == b:
            return 0.0
        sign = 1.0
        if a > b:
            a, b, sign = b, a, -1.0
        total = 0.0
        for lo, hi in _split_at_zero(a, b):
            width = hi - lo
            if lo == 0.0:
                edges = graded_edges(width, 60)
                val, _, _ = adaptive_panels(lambda x: self(x), edges, 1e-13 * max(1.0, width))
            elif hi == 0.0:
                edges = -graded_edges(width, 60)[::-1]
                val, _, _ = adaptive_panels(lambda x: self(x), edges, 1e-13 * max(1.0, width))
            else:
                val, _, _ = adaptive_panels(lambda x: self(x), [lo, hi], 1e-13 * max(1.0, width))
            total += val
        return sign * total


def _split_at_zero(a, b):
    if a < 0.0 < b:
        return [(a, 0.0), (0.0, b)]
    return [(a, b)]


def white():
    return SpectralDensity(DensityKind.WHITE)


def band_limited(delta):
    if not delta > 0:
        raise ParameterError(f"bandwidth Delta must be positive, got {delta!r}")
    return SpectralDensity(DensityKind.BAND_LIMITED, bandwidth=float(delta))


def fractional(H):
    if not 0.0 < H < 1.0:
        raise ParameterError(f"Hurst index H must lie in (0, 1), got {H!r}")
    return SpectralDensity(DensityKind.FRACTIONAL, H=float(H))


def band_limited_fractional(H, delta):
    if not 0.0 < H < 1.0:
        raise ParameterError(f"Hurst index H must lie in (0, 1), got {H!r}")
    if not delta > 0:
        raise ParameterError(f"bandwidth Delta must be positive, got {delta!r}")
    return SpectralDensity(DensityKind.BAND_LIMITED_FRACTIONAL, H=float(H), bandwidth=float(delta))


def custom(func, name="custom", scale=10.0, n_check=1000):
    """Wrap a user density after spot-checking evenness and nonnegativity.

    The check evaluates ``func`` on ``n_check`` Halton points spread over the
    whole real line (a tangent map with the given ``scale``); it catches
    obvious mistakes and proves nothing.
    """
    u = qmc.Halton(d=1, scramble=False).random(n_check + 1)[1:, 0]
    xi = scale * np.tan(np.pi * (u - 0.5))
    xi = xi[xi != 0.0]
    plus = np.asarray(func(xi), dtype=float)
    minus = np.asarray(func(-xi), dtype=float)
    if plus.shape != xi.shape:
        raise DensityValidationError("custom density must be vectorised over ndarray input")
    if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
        raise DensityValidationError(f"custom density {name!r} returned non-finite values away from 0")
    if np.any(plus < 0.0) or np.any(minus < 0.0):
        raise DensityValidationError(f"custom density {name!r} takes negative values")
    if not np.allclose(plus, minus, rtol=1e-12, atol=0.0):
        raise DensityValidationError(f"custom density {name!r} is not even")
    return SpectralDensity(DensityKind.CUSTOM, func=func, name=name)


def make_builtin(kind, **params):
    """Build one of the four closed-form densities by name.

    >>> make_builtin("fractional", H=0.75)(4.0)
    array(0.5)
    """
    kind = DensityKind(kind)
    delta = params.get("Delta", params.get("delta"))
    if kind is DensityKind.WHITE:
        return white()
    if kind is DensityKind.BAND_LIMITED:
        return band_limited(_required(delta, "Delta"))
    if kind is DensityKind.FRACTIONAL:
        return fractional(_required(params.get("H"), "H"))
    if kind is DensityKind.BAND_LIMITED_FRACTIONAL:
        return band_limited_fractional(_required(params.get("H"), "H"), _required(delta, "Delta"))
    raise ParameterError("custom densities need a callable; use spectral.custom()")


def _required(value, key):
    if value is None:
        raise ParameterError(f"missing density parameter {key!r}")
    return float(value)


@dataclass(frozen=True)
class AdmissibilityReport:
    """Integrals over ``[-cutoff, cutoff]``; ``integral_linear`` is ``inf`` when divergence is detected.

    The ``limit_*`` fields carry the tail-extrapolated values over the whole line.
    """

    integral_quadratic: float
    integral_linear: float
    continuous_version: bool
    limit_quadratic: float = math.nan
    limit_linear: float = math.nan


def half_line_edges(m, upper, levels=60):
    """Panel edges on ``[0, upper]``: graded toward 0, doubling above 1, band edge kept."""
    knee = min(1.0, upper)
    if m.graded_at_zero:
        low = graded_edges(knee, levels)
    else:
        low = np.array([0.0, knee])
    n_dbl = max(0, int(math.ceil(math.log2(upper / knee)))) if upper > knee else 0
    doubling = knee * 2.0 ** np.arange(1, n_dbl + 1)
    extra = [m.support] if m.support < upper else []
    return merge_edges(low, doubling, extra, [upper], lo=0.0, hi=upper)


def _innermost(m, edges):
    # A graded mesh stops at edges[1] > 0; the sliver [0, edges[1]] still carries
    # mass ~ edges[1]**(2 - 2H) for singular m, so it is taken from the exact primitive.
    edges = np.asarray(edges, dtype=float)
    if m.graded_at_zero and edges[0] == 0.0 and len(edges) > 2:
        return edges[1], float(m.integral(0.0, edges[1])), edges[1:]
    return None, 0.0, edges


def integrate_weighted(m, weight, edges, tol, max_panels=20000):
    """Integral of ``m * weight`` over ``[edges[0], edges[-1]]`` for smooth ``weight``."""
    eps, mass, edges = _innermost(m, edges)
    head = 0.0 if eps is None else float(weight(np.array(0.5 * eps))) * mass
    val, _, _ = adaptive_panels(lambda x: m(x) * weight(x), edges, tol, max_panels=max_panels)
    return head + val


def density_rule(m, edges, order):
    """Flat nodes and m-weighted weights for integrating smooth functions against m."""
    eps, mass, edges = _innermost(m, edges)
    nodes, weights = panel_rule(edges, order)
    nodes = nodes.ravel()
    weights = weights.ravel() * m(nodes)
    if eps is not None:
        x, w = gauss_legendre(order)
        nodes = np.concatenate((0.5 * eps * (x + 1.0), nodes))
        weights = np.concatenate((0.5 * w * mass, weights))
    return nodes, weights


def _weighted_integral(m, weight, cutoff, tol, max_panels):
    upper = min(cutoff, m.support)
    edges = half_line_edges(m, upper)
    return 2.0 * integrate_weighted(m, weight, edges, tol / 2.0, max_panels)


def _extrapolated(m, weight, cutoff, tol, max_panels):
    """``(I(cutoff), limit)``; the limit is ``inf`` when the tail looks divergent."""
    # I(C), I(2C), I(4C); a power-law tail makes successive increments shrink
    # by a fixed ratio q < 1, and the geometric remainder d2 q / (1 - q) is added.
    i1, i2, i4 = (_weighted_integral(m, weight, k * cutoff, tol, max_panels) for k in (1, 2, 4))
    d1, d2 = i2 - i1, i4 - i2
    if abs(d1) <= 1e-12 * abs(i4) and abs(d2) <= 1e-12 * abs(i4):
        return i1, i4
    q = d2 / d1
    if not 0.0 <= q < DIVERGENCE_RATIO:
        return i1, math.inf
    return i1, i4 + d2 * q / (1.0 - q)


DIVERGENCE_RATIO = 0.97


def admissibility(m, cutoff=1e6, tol=1e-9, max_panels=200000):
    """Check the integrability conditions of m over the real line.

    ``integral_quadratic`` is the integral of m/(1+xi^2) over
    ``[-cutoff, cutoff]``; ``integral_linear`` is that of m/(1+|xi|), or
    ``inf`` when it diverges, which decides ``continuous_version``.
    Divergence is judged from the integrals up to ``cutoff``, ``2 cutoff``
    and ``4 cutoff``: increments shrinking by a ratio of
    ``DIVERGENCE_RATIO`` or more per doubling count as divergent, so tails
    decaying slower than ``xi**-0.044`` are classed that way. Otherwise the
    tail is extrapolated geometrically into ``limit_*``.
    """
    if not cutoff > 0 or not tol > 0:
        raise ParameterError("cutoff and tol must be positive")
    try:
        quad, quad_limit = _extrapolated(m, lambda x: 1.0 / (1.0 + x * x), cutoff, tol, max_panels)
        lin, lin_limit = _extrapolated(m, lambda x: 1.0 / (1.0 + x), cutoff, tol, max_panels)
    except QuadratureError as exc:
        raise QuadratureError(f"admissibility integrals for {m.label} did not converge: {exc}") from exc
    finite = math.isfinite(lin_limit)
    return AdmissibilityReport(
        integral_quadratic=quad if math.isfinite(quad_limit) else math.inf,
        integral_linear=lin if finite else math.inf,
        continuous_version=finite,
        limit_quadratic=quad_limit,
        limit_linear=lin_limit,
    )
