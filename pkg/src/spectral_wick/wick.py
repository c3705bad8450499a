"""Parameterised Hermite polynomials and single-direction Wick algebra.

``h_n^{[t]}(x) = sum_k (-1)^k n! / (k! (n-2k)! 2^k) t^(2k) x^(n-2k)``; only
``t^2`` enters, so everything is written in terms of the variance
``v = t^2 = ||T_m f||^2``. Coefficients are integers, which keeps scalar
evaluation exact: floats are converted to :class:`~fractions.Fraction`
without loss and the result is rounded once.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from numbers import Rational

import numpy as np

MAX_ORDER = 64
EXACT_ORDER = 30


class HermiteOrderError(OverflowError):
    """Requested Hermite order exceeds :data:`MAX_ORDER`."""


class DirectionMismatchError(ValueError):
    """Wick operands live on different directions or variances."""


@lru_cache(maxsize=None)
def hermite_coeffs(n):
    """``c[k]`` such that ``h_n^{[t]}(x) = sum_k c[k] t^(2k) x^(n-2k)``."""
    if not 0 <= n <= MAX_ORDER:
        raise HermiteOrderError(f"Hermite order {n} outside [0, {MAX_ORDER}]")
    return tuple(
        (-1) ** k * math.factorial(n) // (math.factorial(k) * math.factorial(n - 2 * k) * 2**k)
        for k in range(n // 2 + 1)
    )


def _exact(x):
    return x if isinstance(x, Rational) else Fraction(x)


def _is_exact(*xs):
    return all(isinstance(x, Rational) for x in xs)


def hermite_param(n, t, x):
    """``h_n^{[t]}(x)``, summed exactly.

    Rational arguments give a :class:`Fraction` (or int); float arguments
    give the correctly rounded float of the exact sum.
    """
    if t < 0:
        raise ValueError("the Hermite parameter t must be nonnegative")
    exact = _is_exact(t, x)
    v, xe = _exact(t) ** 2, _exact(x)
    value = sum(c * v**k * xe ** (n - 2 * k) for k, c in enumerate(hermite_coeffs(n)))
    return value if exact else float(value)


def hermite_values(n_max, v, x):
    """``h_0 .. h_{n_max}`` with variance ``v`` at array ``x`` by the three-term recurrence."""
    if n_max > MAX_ORDER:
        raise HermiteOrderError(f"Hermite order {n_max} exceeds {MAX_ORDER}")
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = x
    for n in range(1, n_max):
        out[n + 1] = x * out[n] - n * v * out[n - 1]
    return out


def _coerce(c):
    if isinstance(c, (Rational, float)):
        return c
    if isinstance(c, np.floating):
        return float(c)
    if isinstance(c, np.integer):
        return int(c)
    raise TypeError(f"unsupported coefficient type {type(c).__name__}")


def _trim(coeffs):
    coeffs = list(coeffs)
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    return tuple(coeffs) or (0,)


@dataclass(frozen=True)
class WickPolynomial:
    """``sum_n coeffs[n] h~_n(<omega, f>)`` for one fixed direction f with variance ``||T_m f||^2``."""

    coeffs: tuple
    variance: object = 1
    direction_label: str = "f"

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")
        object.__setattr__(self, "coeffs", _trim(_coerce(c) for c in self.coeffs))
        if self.degree > MAX_ORDER:
            raise HermiteOrderError(f"Wick polynomial degree {self.degree} exceeds {MAX_ORDER}")

    @classmethod
    def basis(cls, n, variance=1, direction_label="f"):
        """``h~_n`` itself."""
        return cls((0,) * n + (1,), variance, direction_label)

    @classmethod
    def constant(cls, c, variance=1, direction_label="f"):
        return cls((c,), variance, direction_label)

    @property
    def degree(self):
        return len(self.coeffs) - 1

    @property
    def expectation(self):
        return self.coeffs[0]

    def _check(self, other):
        if (self.direction_label, self.variance) != (other.direction_label, other.variance):
            raise DirectionMismatchError(
                f"cannot combine Wick polynomials in {self.direction_label!r} (v={self.variance}) "
                f"and {other.direction_label!r} (v={other.variance})"
            )

    def _with(self, coeffs):
        return WickPolynomial(tuple(coeffs), self.variance, self.direction_label)

    def __add__(self, other):
        if not isinstance(other, WickPolynomial):
            return self + self.constant(other, self.variance, self.direction_label)
        self._check(other)
        n = max(len(self.coeffs), len(other.coeffs))
        a = self.coeffs + (0,) * (n - len(self.coeffs))
        b = other.coeffs + (0,) * (n - len(other.coeffs))
        return self._with(x + y for x, y in zip(a, b))

    __radd__ = __add__

    def __neg__(self):
        return self._with(-c for c in self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        """Scalar multiple; the Wick product is :func:`wick_product`."""
        if isinstance(scalar, WickPolynomial):
            raise TypeError("use wick_product for products of Wick polynomials")
        return self._with(c * scalar for c in self.coeffs)

    __rmul__ = __mul__

    def __call__(self, x):
        return evaluate(self, x)


def wick_product(p, q):
    """``p ⋄ q``: since ``h~_n ⋄ h~_k = h~_{n+k}`` this is coefficient convolution."""
    p._check(q)
    out = [0] * (len(p.coeffs) + len(q.coeffs) - 1)
    for i, a in enumerate(p.coeffs):
        for j, b in enumerate(q.coeffs):
            out[i + j] += a * b
    return p._with(out)


def _inverse_factorial(k):
    return Fraction(1, math.factorial(k)) if k <= EXACT_ORDER else 1.0 / math.factorial(k)


def wick_exp(N, v=1, direction_label="f"):
    """Truncation of ``:e^{<omega,f>}: = sum_k h~_k / k!`` at order ``N``."""
    if N < 0:
        raise ValueError("truncation order must be nonnegative")
    return WickPolynomial(tuple(_inverse_factorial(k) for k in range(N + 1)), v, direction_label)


@dataclass(frozen=True)
class WickExponential:
    """The untruncated Wick exponential ``:e^{c <omega,f>}:`` (scale ``c``)."""

    variance: object = 1
    direction_label: str = "f"
    scale: object = 1

    def truncate(self, N):
        c = self.scale
        return WickPolynomial(
            tuple(c**k * _inverse_factorial(k) for k in range(N + 1)), self.variance, self.direction_label
        )

    def __call__(self, x):
        """``exp(c x - c^2 v / 2)``."""
        return np.exp(self.scale * np.asarray(x, dtype=float) - 0.5 * self.scale**2 * float(self.variance))


def to_monomial(p):
    """Ascending coefficients of ``p`` as a polynomial in ``x = <omega, f>``."""
    out = [0] * len(p.coeffs)
    v = p.variance
    for n, a in enumerate(p.coeffs):
        if a == 0:
            continue
        for k, c in enumerate(hermite_coeffs(n)):
            out[n - 2 * k] += a * c * v**k
    return tuple(out)


def from_monomial(poly, v=1, direction_label="f"):
    """Inverse of :func:`to_monomial`: ``x^n = sum_k n!/(k!(n-2k)!2^k) v^k h~_{n-2k}``."""
    out = [0] * len(poly)
    for n, a in enumerate(poly):
        a = _coerce(a)
        if a == 0:
            continue
        for k, c in enumerate(hermite_coeffs(n)):
            out[n - 2 * k] += a * abs(c) * v**k
    return WickPolynomial(tuple(out), v, direction_label)


def evaluate(p, x):
    """Value of ``p`` at ``<omega, f> = x``.

    Scalars are evaluated exactly (see :func:`hermite_param`); arrays use
    the float recurrence.
    """
    if np.ndim(x) == 0 and not isinstance(x, np.ndarray):
        exact = _is_exact(x, p.variance, *p.coeffs)
        xe, v = _exact(x), _exact(p.variance)
        value = sum(
            _exact(a) * sum(c * v**k * xe ** (n - 2 * k) for k, c in enumerate(hermite_coeffs(n)))
            for n, a in enumerate(p.coeffs)
            if a != 0
        )
        return value if exact else float(value)
    h = hermite_values(p.degree, float(p.variance), x)
    coeffs = np.array([float(c) for c in p.coeffs])
    return np.tensordot(coeffs, h, axes=(0, 0))
