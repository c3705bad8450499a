"""The S_m-defined stochastic integral and Ito-formula checks.

An integrand is known through its S_m image ``t -> (S_m X_t)(s)``; the
integral's image is ``int (S_m X_t)(s) B_s'(t) dt``, evaluated here by
adaptive Gauss-Legendre in time. Closed forms exist for deterministic
integrands, Hermite chains, Wick exponentials and ``B dB``.
"""

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ._quadrature import adaptive_panels, graded_edges, merge_edges
from .kernel import DEFAULT_CONFIG, variance_r
from .operator_tm import GridFunction, Window, smooth_spectrum
from .s_transform import (
    Probe,
    b_s,
    direction_variance,
    gaussian_expectation,
    s_closed,
    s_of_F,
    standard_probes,
)
from .sampling import column_means, sample
from .wick import WickExponential, WickPolynomial, hermite_coeffs

TIME_TOL = 1e-8
GRADED_LEVELS = 40


class Form(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    WICK_CHAIN = "wick_chain"
    WICK_EXP = "wick_exp"
    PATH_POWER = "path_power"
    SMOOTH_F = "smooth_f"


class UnsupportedFormError(TypeError):
    pass


class IntegrabilityError(ArithmeticError):
    pass


class DerivativeInstabilityError(ArithmeticError):
    """Richardson extrapolation of v'(t) did not settle."""


@dataclass(frozen=True, eq=False)
class IntegrandSpec:
    """A process ``t -> X_t`` on ``interval`` with a known S_m image.

    ``f`` weights the window ``1_t f`` (``None`` means 1). ``mask`` restricts
    the integrand to a sub-interval, i.e. multiplies it by ``1_M``.
    ``factor`` is an optional ``(Y, direction)`` pair; the integrand becomes
    ``Y ⋄ X_t``.
    """

    form: Form
    interval: tuple
    f: Optional[GridFunction] = None
    n: int = 0
    F: Optional[Callable] = None
    mask: Optional[tuple] = None
    factor: Optional[tuple] = None
    label: str = ""
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        a, b = (float(x) for x in self.interval)
        if a > b:
            raise ValueError(f"interval [{a}, {b}] is reversed")
        object.__setattr__(self, "interval", (a, b))
        if self.f is not None and a < 0.0:
            raise ValueError("weighted windows 1_t f are defined for t >= 0 only")
        if self.form is Form.SMOOTH_F and self.F is None:
            raise ValueError("SmoothF integrands need F(t, x)")

    @classmethod
    def deterministic(cls, a, b, f=None):
        return cls(Form.DETERMINISTIC, (a, b), f=f, label="f" if f is not None else "1")

    @classmethod
    def wick_chain(cls, n, a, b, f=None):
        return cls(Form.WICK_CHAIN, (a, b), f=f, n=int(n), label=f"f h~_{n}")

    @classmethod
    def wick_exp(cls, a, b, f=None):
        return cls(Form.WICK_EXP, (a, b), f=f, label="f :e:")

    @classmethod
    def path_power(cls, k, a, b):
        return cls(Form.PATH_POWER, (a, b), n=int(k), label=f"B^{k}")

    @classmethod
    def smooth_f(cls, F, a, b, label="F"):
        """``F(t, B_m(t))`` for a vectorised ``F``."""
        return cls(Form.SMOOTH_F, (a, b), F=F, label=label)

    def restrict(self, lo, hi):
        """This integrand multiplied by the indicator of ``[lo, hi]``."""
        return replace(self, mask=(float(lo), float(hi)))

    def times(self, y, direction):
        """``Y ⋄ X_t`` for a Wick polynomial/exponential ``Y`` in ``direction``."""
        return replace(self, factor=(y, direction))

    def weight(self, t):
        return np.ones_like(t) if self.f is None else self.f(t)


def _window_pairs(spec_, m, probe, t):
    sp = probe.spectrum(m)
    if spec_.f is None:
        return sp.pair_indicator(t)
    return sp.pair_window(Window(0.0, spec_.f), t)


def _variances(m, t, cfg):
    return np.array([variance_r(m, ti, cfg) for ti in np.ravel(t)]).reshape(np.shape(t))


def s_integrand(m, X, probe, t, cfg=DEFAULT_CONFIG):
    """``(S_m X_t)(s)`` at an array of times."""
    t = np.asarray(t, dtype=float)
    w = X.weight(t)
    if X.form is Form.DETERMINISTIC:
        out = w * np.ones_like(t)
    elif X.form is Form.WICK_CHAIN:
        out = w * _window_pairs(X, m, probe, t) ** X.n
    elif X.form is Form.WICK_EXP:
        out = w * np.exp(_window_pairs(X, m, probe, t))
    elif X.form is Form.PATH_POWER:
        # B^k = sum_i k!/(i!(k-2i)!2^i) v^i h~_{k-2i}(B), v = r(t), and S h~_j = b^j
        b = _window_pairs(X, m, probe, t)
        v = _variances(m, t, cfg)
        k = X.n
        out = sum(abs(c) * v**i * b ** (k - 2 * i) for i, c in enumerate(hermite_coeffs(k)))
    else:
        mean = _window_pairs(X, m, probe, t)
        v = _variances(m, t, cfg)
        out = gaussian_expectation(lambda x: X.F(t[..., None], x), mean, v)
    if X.mask is not None:
        lo, hi = X.mask
        out = np.where((t >= lo) & (t <= hi), out, 0.0)
    if X.factor is not None:
        y, direction = X.factor
        out = out * s_closed(m, y, probe, direction, cfg).value
    return out


def time_edges(a, b, extra=()):
    """Panel edges on [a, b], graded geometrically toward t = 0 when it lies inside."""
    pieces = [[a, b], [x for x in extra if a <= x <= b]]
    if b > 0.0 and a < b:
        lo = max(a, 0.0)
        if lo == 0.0:
            pieces.append(graded_edges(b, GRADED_LEVELS))
    if a < 0.0 < b or (a < 0.0 and b == 0.0):
        pieces.append(-graded_edges(-a, GRADED_LEVELS))
    return merge_edges(*pieces, lo=a, hi=b)


def integrate_numeric(m, X, probe, tol=TIME_TOL, cfg=DEFAULT_CONFIG):
    """``(S_m int X dB_m)(s) = int (S_m X_t)(s) B_s'(t) dt`` by adaptive time quadrature."""
    a, b = X.interval
    if a == b:
        return 0.0
    check_integrability(m, X, cfg)
    sp = probe.spectrum(m)
    extra = X.mask or ()

    def integrand(t):
        return s_integrand(m, X, probe, t, cfg) * sp.pair_indicator_derivative(t)

    value, _, _ = adaptive_panels(integrand, time_edges(a, b, extra), tol)
    return value


def check_integrability(m, X, cfg=DEFAULT_CONFIG):
    """Three-point estimate of ``int E|X_t| dt`` under the Gaussian marginals; must be finite."""
    key = ("integrability", m)
    if key in X._cache:
        return X._cache[key]
    a, b = X.interval
    ts = (a, 0.5 * (a + b), b)
    vals = []
    for t in ts:
        w = abs(float(X.weight(np.array(t))))
        direction = Window(t) if X.f is None else Window(t, X.f)
        v = direction_variance(m, direction, cfg) if t != 0.0 else 0.0
        if X.form is Form.DETERMINISTIC or X.form is Form.WICK_EXP:
            e = 1.0
        elif X.form is Form.WICK_CHAIN:
            coeffs = hermite_coeffs(X.n)
            e = gaussian_expectation(
                lambda x: np.abs(sum(c * v**k * x ** (X.n - 2 * k) for k, c in enumerate(coeffs))), 0.0, v)
        elif X.form is Form.PATH_POWER:
            e = gaussian_expectation(lambda x: np.abs(x) ** X.n, 0.0, v)
        else:
            e = gaussian_expectation(lambda x: np.abs(X.F(t, x)), 0.0, v)
        vals.append(w * e)
    bound = (b - a) / 6.0 * (vals[0] + 4.0 * vals[1] + vals[2])
    if not math.isfinite(bound):
        raise IntegrabilityError(f"E|X_t| is not integrable over [{a}, {b}] for {X.label}")
    X._cache[key] = bound
    return bound


@dataclass(frozen=True)
class ClosedTerm:
    coefficient: float
    target: object
    direction: object


@dataclass(frozen=True)
class ClosedIntegral:
    """Sum of ``coefficient * target(<omega, direction>)`` terms."""

    terms: tuple

    def s_value(self, m, probe, cfg=DEFAULT_CONFIG):
        return sum(
            t.coefficient * s_closed(m, t.target, probe, t.direction, cfg).value for t in self.terms
        )

    @property
    def wick(self):
        """The single Wick element when the integral has one term."""
        if len(self.terms) != 1:
            raise ValueError("integral has more than one term")
        term = self.terms[0]
        return term.target * term.coefficient if isinstance(term.target, WickPolynomial) else term.target


def _endpoint_terms(make, X, m, cfg):
    a, b = X.interval
    terms = []
    for t, sign in ((b, 1.0), (a, -1.0)):
        if t == 0.0:
            continue
        direction = Window(t) if X.f is None else Window(t, X.f)
        terms.extend(ClosedTerm(sign * c, target, direction) for c, target in make(direction))
    return terms


def integrate_closed(m, X, cfg=DEFAULT_CONFIG):
    """Closed-form value of ``int_a^b X dB_m`` as a :class:`ClosedIntegral`.

    Each family has an antiderivative ``G`` in Wick form and the integral
    is ``G(b) - G(a)``: ``h~_1`` for deterministic integrands,
    ``h~_{n+1}/(n+1)`` for Hermite chains, the Wick exponential for
    ``WickExp`` and ``h~_2/2`` for ``B dB``.
    """
    if X.mask is not None or X.factor is not None:
        raise UnsupportedFormError("closed forms cover unmasked integrands without a Wick factor")
    if X.form is Form.DETERMINISTIC:
        make = lambda d: [(1.0, WickPolynomial.basis(1, _variance(m, d, cfg)))]
    elif X.form is Form.WICK_CHAIN:
        n = X.n
        make = lambda d: [(1.0 / (n + 1), WickPolynomial.basis(n + 1, _variance(m, d, cfg)))]
    elif X.form is Form.WICK_EXP:
        make = lambda d: [(1.0, WickExponential(_variance(m, d, cfg)))]
    elif X.form is Form.PATH_POWER and X.n == 1:
        make = lambda d: [(0.5, WickPolynomial.basis(2, _variance(m, d, cfg)))]
    else:
        raise UnsupportedFormError(f"no closed form for {X.form.value} (n={X.n})")
    terms = _endpoint_terms(make, X, m, cfg)
    if X.form is Form.WICK_EXP and X.interval[0] == 0.0:
        terms.append(ClosedTerm(-1.0, 1.0, None))
    return ClosedIntegral(tuple(terms))


def _variance(m, direction, cfg):
    return direction_variance(m, direction, cfg)


@dataclass(frozen=True)
class VerificationReport:
    identity: str
    probe_errors: tuple
    max_error: float
    tolerance: float
    mc_z_scores: Optional[tuple] = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        ok = self.max_error < self.tolerance
        if self.mc_z_scores is not None:
            ok = ok and all(abs(z) < 4.0 for z in self.mc_z_scores)
        return bool(ok)

    def to_dict(self):
        out = {
            "identity": self.identity,
            "probe_errors": [{"probe": p, "error": e} for p, e in self.probe_errors],
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }
        if self.mc_z_scores is not None:
            out["mc_z_scores"] = list(self.mc_z_scores)
        if self.details:
            out["details"] = self.details
        return out


def _report(identity, pairs, tolerance, **kw):
    errors = tuple((label, float(err)) for label, err in pairs)
    return VerificationReport(identity, errors, max(e for _, e in errors), tolerance, **kw)


def verify_integral(m, X, probes=None, tolerance=1e-6, cfg=DEFAULT_CONFIG):
    """Compare the numeric and closed-form S_m images of ``int X dB_m`` at each probe."""
    probes = standard_probes() if probes is None else probes
    closed = integrate_closed(m, X, cfg)
    pairs = [
        (p.label, abs(integrate_numeric(m, X, p, cfg=cfg) - closed.s_value(m, p, cfg)))
        for p in probes
    ]
    return _report(f"integral of {X.label} over [{X.interval[0]:g}, {X.interval[1]:g}]", pairs, tolerance)


def wick_shift_property(m, Y, direction, X, probes=None, tolerance=1e-6, cfg=DEFAULT_CONFIG):
    """``Y ⋄ int X dB = int Y ⋄ X_t dB``, compared probe by probe."""
    probes = standard_probes() if probes is None else probes
    shifted = X.times(Y, direction)
    pairs = []
    for p in probes:
        left = s_closed(m, Y, p, direction, cfg).value * integrate_numeric(m, X, p, cfg=cfg)
        pairs.append((p.label, abs(left - integrate_numeric(m, shifted, p, cfg=cfg))))
    return _report("Wick product commutes with the integral", pairs, tolerance)


def increment_property(m, a, b, probes=None, tolerance=1e-6, cfg=DEFAULT_CONFIG):
    """``int_a^b dB_m = B_m(b) - B_m(a)``: numeric integral against ``b_s(b) - b_s(a)``."""
    probes = standard_probes() if probes is None else probes
    X = IntegrandSpec.deterministic(a, b)
    pairs = [(p.label, abs(integrate_numeric(m, X, p, cfg=cfg) - (b_s(m, p, b) - b_s(m, p, a)))) for p in probes]
    return _report(f"increment B({b:g}) - B({a:g})", pairs, tolerance)


def restriction_property(m, X, lo, hi, probes=None, tolerance=1e-8, cfg=DEFAULT_CONFIG):
    """Integrating over ``[lo, hi]`` equals integrating ``1_[lo,hi] X`` over the full interval."""
    probes = standard_probes() if probes is None else probes
    inner = replace(X, interval=(lo, hi))
    masked = X.restrict(lo, hi)
    pairs = [
        (p.label, abs(integrate_numeric(m, inner, p, cfg=cfg) - integrate_numeric(m, masked, p, cfg=cfg)))
        for p in probes
    ]
    return _report(f"restriction of {X.label} to [{lo:g}, {hi:g}]", pairs, tolerance)


def zero_expectation(m, X, tolerance=1e-10, cfg=DEFAULT_CONFIG):
    """At the zero probe the S_m image is the expectation, which must vanish."""
    return _report(f"zero mean of the integral of {X.label}",
                   [("zero", abs(integrate_numeric(m, X, Probe.zero(), cfg=cfg)))], tolerance)


def product_gap(m, g, tau, probe, cfg=DEFAULT_CONFIG):
    """Ordinary product versus integral for ``Y = :e^{<omega,g>}:`` and ``X_t = :e^{<omega,1_t>}:``.

    ``Y int_0^tau X dB`` has S_m image ``e^{(s,g)} (E(tau) - 1)`` with
    ``E(t) = e^{(s,1_t) + (g,1_t)}``, while ``int Y X_t dB`` has
    ``e^{(s,g)} int E(t) (s,1_t)' dt``. Their difference is
    ``e^{(s,g)} int_0^tau E(t) (g,1_t)' dt`` since ``E' = E ((s,1_t)' + (g,1_t)')``.
    Returns the three quantities and the residual of that identity.
    """
    sp = probe.spectrum(m)
    gp = smooth_spectrum(m, g)
    sg = float(sp.pair_smooth(g))
    growth = lambda t: np.exp(sp.pair_indicator(t) + gp.pair_indicator(t))
    outer = math.exp(sg) * (float(growth(np.array(tau))) - 1.0)
    edges = time_edges(0.0, tau)
    inner, _, _ = adaptive_panels(lambda t: growth(t) * sp.pair_indicator_derivative(t), edges, TIME_TOL)
    gap, _, _ = adaptive_panels(lambda t: growth(t) * gp.pair_indicator_derivative(t), edges, TIME_TOL)
    inner *= math.exp(sg)
    gap *= math.exp(sg)
    return {"product_outside": outer, "product_inside": inner, "gap": gap, "residual": outer - inner - gap}


# ---------------------------------------------------------------- Ito formula

@dataclass(frozen=True)
class ItoFunction:
    """``F(t, x)`` with the partial derivatives the Ito formula needs (all vectorised)."""

    name: str
    F: Callable
    F_t: Callable
    F_x: Callable
    F_xx: Callable


def _zero(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


SQUARE = ItoFunction("x^2", lambda t, x: x * x, _zero, lambda t, x: 2.0 * x, lambda t, x: 2.0 + 0.0 * x)
IDENTITY = ItoFunction("x", lambda t, x: x + 0.0 * t, _zero, lambda t, x: 1.0 + 0.0 * x, _zero)
COSINE = ItoFunction("cos x", lambda t, x: np.cos(x), _zero, lambda t, x: -np.sin(x), lambda t, x: -np.cos(x))


def variance_derivative(m, t, h0=0.05, rel_tol=1e-7, cfg=DEFAULT_CONFIG):
    """``v'(t)`` for ``v = r`` by central differences at ``h, h/2, h/4`` with Richardson steps.

    Raises :class:`DerivativeInstabilityError` when the two Richardson
    estimates differ by more than ``rel_tol`` relative.
    """
    t = float(t)
    if t <= 0.0:
        raise ValueError("v'(t) is evaluated for t > 0 only")
    h = min(h0, t / 16.0)
    d = [(variance_r(m, t + k, cfg) - variance_r(m, t - k, cfg)) / (2.0 * k) for k in (h, h / 2.0, h / 4.0)]
    r1 = (4.0 * d[1] - d[0]) / 3.0
    r2 = (4.0 * d[2] - d[1]) / 3.0
    if abs(r2 - r1) > rel_tol * abs(r2) + 1e-12:
        raise DerivativeInstabilityError(f"v'({t:g}) unstable under refinement: {r1:.12g} vs {r2:.12g}")
    return (16.0 * r2 - r1) / 15.0


def _lebesgue_terms(m, F, tau, mean_fn, cfg):
    """``int_0^tau E[F_t] dt + 1/2 int_0^tau v' E[F_xx] dt`` with ``X_t ~ N(mean_fn(t), v(t))``."""

    def integrand(ts):
        v = _variances(m, ts, cfg)
        dv = np.vectorize(lambda t: variance_derivative(m, t, cfg=cfg))(ts)
        mean = mean_fn(ts)
        tt = ts[..., None]
        et = gaussian_expectation(lambda x: F.F_t(tt, x), mean, v)
        exx = gaussian_expectation(lambda x: F.F_xx(tt, x), mean, v)
        return et + 0.5 * dv * exx

    value, _, _ = adaptive_panels(integrand, time_edges(0.0, tau), TIME_TOL)
    return value


def ito_check(m, F, tau, n_mc=100_000, seed=0, probes=None, tolerance=1e-5, cfg=DEFAULT_CONFIG):
    """Check ``F(tau, X_tau) - F(0, 0) = int F_x dX + int F_t dt + 1/2 int v' F_xx dt`` for ``X = B_m``.

    Expectation level: both sides by Gauss-Hermite (the stochastic integral
    has mean zero), plus a Monte-Carlo z-score for the left side. Probe
    level: S_m of both sides at each probe.
    """
    probes = standard_probes() if probes is None else probes
    v_tau = variance_r(m, tau, cfg)
    f0 = float(F.F(0.0, np.array(0.0)))
    lhs = gaussian_expectation(lambda x: F.F(tau, x), 0.0, v_tau) - f0
    rhs = _lebesgue_terms(m, F, tau, np.zeros_like, cfg)
    ens = sample(m, [tau], n_mc, seed=seed, cfg=cfg)
    vals = np.asarray(F.F(tau, ens.paths[:, 0]), dtype=float) - f0
    mean, err = column_means(vals[:, None])
    z = float((mean[0] - rhs) / err[0]) if err[0] > 0 else 0.0
    expectation = {"lhs": lhs, "rhs": rhs, "error": abs(lhs - rhs), "mc_mean": float(mean[0]),
                   "mc_stderr": float(err[0]), "mc_z": z}

    pairs = []
    stochastic = IntegrandSpec.smooth_f(F.F_x, 0.0, tau, label=f"d/dx {F.name}")
    for p in probes:
        sp = p.spectrum(m)
        left = s_of_F(m, None, tau, lambda x: F.F(tau, x), p, cfg=cfg).value - f0
        right = integrate_numeric(m, stochastic, p, cfg=cfg)
        right += _lebesgue_terms(m, F, tau, sp.pair_indicator, cfg)
        pairs.append((p.label, abs(left - right)))
    return _report(f"Ito formula for F = {F.name}", pairs, tolerance, mc_z_scores=(z,),
                   details={"expectation": expectation, "tau": tau, "v_tau": v_tau})
