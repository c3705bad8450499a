"""The S_m transform at test functions ("probes"), by closed form, Gauss-Hermite and Monte Carlo.

``(S_m Phi)(s) = E[:e^{<omega,s>}: Phi]``. Under the tilted measure
``<omega, d>`` is normal with mean ``(T_m s, T_m d)`` and variance
``||T_m d||^2``, which is all the Gauss-Hermite route needs.
"""

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .kernel import DEFAULT_CONFIG, pairing, variance_r
from .operator_tm import GridFunction, Window, smooth_spectrum
from .wick import WickExponential, WickPolynomial, hermite_coeffs

GH_ORDER = 64


class Route(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    GAUSS_QUADRATURE = "gauss_quadrature"
    MONTE_CARLO = "monte_carlo"


class UnsupportedTargetError(TypeError):
    pass


class GrowthError(OverflowError):
    """The integrand overflowed at the outer Gauss-Hermite nodes."""


class MissingColumnError(KeyError):
    pass


@dataclass(frozen=True)
class STransformValue:
    value: float
    route: Route
    stderr: Optional[float] = None

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True, eq=False)
class Probe:
    """A smooth, rapidly decaying test function ``s`` on a grid."""

    s: GridFunction
    label: str

    @classmethod
    def gaussian(cls, centre, width, step=None):
        s = GridFunction.gaussian_bump(centre, width, step=step)
        return cls(s, s.label)

    @classmethod
    def zero(cls):
        return cls(GridFunction(-1.0, 0.1, np.zeros(21), label="zero"), "zero")

    @property
    def is_zero(self):
        return not np.any(self.s.samples)

    def spectrum(self, m):
        return smooth_spectrum(m, self.s)


STANDARD_BUMPS = ((0.0, 1.0), (1.0, 0.5), (-1.0, 0.5), (2.0, 1.0), (0.5, 0.25))


@lru_cache(maxsize=1)
def standard_probes():
    """The five fixed Gaussian-bump probes used by every verification."""
    return tuple(Probe.gaussian(c, w) for c, w in STANDARD_BUMPS)


def b_s(m, probe, t):
    """``B_s(t) = (T_m s, T_m 1_t)``; float for scalar ``t``, array otherwise."""
    out = probe.spectrum(m).pair_indicator(t)
    return float(out) if np.ndim(out) == 0 else out


def b_s_prime(m, probe, t):
    """``d/dt B_s(t)``, from the exact derivative of the indicator transform."""
    out = probe.spectrum(m).pair_indicator_derivative(t)
    return float(out) if np.ndim(out) == 0 else out


def pair(m, probe, direction, cfg=DEFAULT_CONFIG):
    """``(T_m s, T_m d)`` for a time, window or grid function ``d``."""
    if isinstance(direction, Window):
        out = probe.spectrum(m).pair_window(direction)
        return float(out)
    if isinstance(direction, GridFunction):
        return float(pairing(m, probe.s, direction, cfg))
    return b_s(m, probe, float(direction))


def direction_variance(m, direction, cfg=DEFAULT_CONFIG):
    """``||T_m d||^2``; exact kernel value for plain times and indicator windows."""
    if isinstance(direction, Window) and direction.f is None:
        return variance_r(m, direction.end, cfg)
    if not isinstance(direction, (Window, GridFunction)):
        return variance_r(m, float(direction), cfg)
    return float(pairing(m, direction, direction, cfg))


@lru_cache(maxsize=8)
def _hermgauss(order):
    return np.polynomial.hermite.hermgauss(order)


def gaussian_expectation(F, mean, var, order=GH_ORDER):
    """``E F(X)`` for ``X ~ N(mean, var)`` by Gauss-Hermite; broadcasts over ``mean``/``var``.

    ``F`` receives an array with the quadrature nodes on the last axis.
    """
    x, w = _hermgauss(order)
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(2.0 * np.asarray(var, dtype=float))
    nodes = mean[..., None] + sd[..., None] * x
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.asarray(F(nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise GrowthError("integrand is not finite at the Gauss-Hermite nodes; F grows too fast")
    out = vals @ w / math.sqrt(math.pi)
    return float(out) if out.ndim == 0 else out


def s_closed(m, target, probe, f=None, cfg=DEFAULT_CONFIG):
    """Closed-form S_m of a constant, a Wick polynomial or a Wick exponential in direction ``f``.

    ``S h~_n = a^n`` and ``S :e^{c<omega,f>}: = e^{c a}`` with ``a = (T_m s, T_m f)``.
    """
    if isinstance(target, (int, float)) and not isinstance(target, bool):
        return STransformValue(float(target), Route.CLOSED_FORM)
    if isinstance(target, WickPolynomial):
        if target.degree == 0:
            return STransformValue(float(target.coeffs[0]), Route.CLOSED_FORM)
        a = _require_pair(m, probe, f, cfg)
        value = sum(float(c) * a**n for n, c in enumerate(target.coeffs))
        return STransformValue(value, Route.CLOSED_FORM)
    if isinstance(target, WickExponential):
        a = _require_pair(m, probe, f, cfg)
        return STransformValue(math.exp(float(target.scale) * a), Route.CLOSED_FORM)
    raise UnsupportedTargetError(f"no closed form for target of type {type(target).__name__}")


def _require_pair(m, probe, f, cfg):
    if f is None:
        raise ValueError("a direction f is needed for non-constant targets")
    return pair(m, probe, f, cfg)


def s_gaussian(m, direction, F, probe, order=GH_ORDER, variance=None, cfg=DEFAULT_CONFIG):
    """Gauss-Hermite S_m of ``F(<omega, d>)``."""
    mean = pair(m, probe, direction, cfg)
    var = direction_variance(m, direction, cfg) if variance is None else variance
    return STransformValue(gaussian_expectation(F, mean, var, order), Route.GAUSS_QUADRATURE)


def s_of_F(m, f, t, F, probe, order=GH_ORDER, cfg=DEFAULT_CONFIG):
    """S_m of ``F(<omega, 1_t f>)``; ``f=None`` means ``f = 1`` so the variable is ``B_m(t)``."""
    if order < GH_ORDER:
        raise ValueError(f"Gauss-Hermite order must be at least {GH_ORDER}")
    return s_gaussian(m, Window(float(t), f), F, probe, order, cfg=cfg)


def s_monte_carlo(m, ensemble, phi, probe):
    """Monte-Carlo S_m: the mean of ``:e^{<omega,s>}: Phi`` over draws.

    ``ensemble`` must have ``<omega, s>`` co-sampled as an extra direction
    labelled ``probe.label``; ``phi`` holds one value of Phi per draw.
    """
    try:
        col = len(ensemble.times) + ensemble.extra_directions.index(probe.label)
    except ValueError:
        raise MissingColumnError(f"ensemble has no column for probe {probe.label!r}") from None
    norm2 = probe.spectrum(m).norm2
    weights = np.exp(ensemble.draws[:, col] - 0.5 * norm2)
    terms = weights * np.asarray(phi, dtype=float)
    n = terms.size
    return STransformValue(float(terms.mean()), Route.MONTE_CARLO, float(terms.std(ddof=1) / math.sqrt(n)))


def s_product_rule(m, f, g, probe, cfg=DEFAULT_CONFIG):
    """S_m of ``:e^{<omega,f>}: :e^{<omega,g>}:`` (ordinary product).

    Equals ``e^{(T_m f, T_m g)} e^{(T_m s, T_m f)} e^{(T_m s, T_m g)}``;
    ``g=None`` stands for the zero function.
    """
    af = pair(m, probe, f, cfg)
    if g is None:
        return math.exp(af)
    ag = pair(m, probe, g, cfg)
    return math.exp(pairing(m, f, g, cfg) + af + ag)


def s_power(m, direction, j, probe, cfg=DEFAULT_CONFIG):
    """Gauss-Hermite S_m of ``<omega, d>^j``."""
    return s_gaussian(m, direction, lambda x: x**j, probe, cfg=cfg)


def hermite_reconstruction(m, direction, n, probe, cfg=DEFAULT_CONFIG):
    """Rebuild ``(T_m s, T_m d)^n`` from the S_m images of the powers ``<omega, d>^(n-2k)``.

    Uses ``h~_n = sum_k c_k v^k x^(n-2k)`` and ``S h~_n = a^n``. Returns
    ``(reconstructed, direct)``.
    """
    v = direction_variance(m, direction, cfg)
    rebuilt = sum(
        c * v**k * s_power(m, direction, n - 2 * k, probe, cfg).value
        for k, c in enumerate(hermite_coeffs(n))
    )
    return rebuilt, pair(m, probe, direction, cfg) ** n
