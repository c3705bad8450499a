"""Joint Gaussian draws of path values B_m(t) and Wiener integrals <omega, f>.

Every draw has its own Philox stream keyed by ``(seed, draw index)``, so an
ensemble is bitwise identical whatever the thread count and draw ``i`` of a
large ensemble equals draw ``i`` of any larger one.
"""

import enum
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernel import DEFAULT_CONFIG, covariance, factorize, pairing, variance_r
from .operator_tm import GridFunction, Window

THREADS_ENV = "SPECTRAL_WICK_THREADS"
CHUNK = 512


class Method(str, enum.Enum):
    CHOLESKY = "cholesky"
    SPECTRAL = "spectral"


class SpectralMethodError(ValueError):
    """The spectral synthesis method only produces path values."""


class EffectiveSampleSizeWarning(UserWarning):
    pass


def thread_count():
    raw = os.environ.get(THREADS_ENV, "")
    if raw.strip():
        n = int(raw)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        return n
    return min(8, os.cpu_count() or 1)


def draw_stream(seed, index):
    """Generator for draw ``index`` of the ensemble with ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed) % 2**64, counter=[0, 0, 0, int(index)]))


def _standard_normals(seed, lo, hi, width):
    """Rows ``lo..hi-1``; row ``i`` comes from :func:`draw_stream` ``(seed, i)``."""
    return np.stack([draw_stream(seed, i).standard_normal(width) for i in range(lo, hi)])


def _chunked(n, width, seed, project):
    """``project(z)`` for every chunk of standard normals, written into one array.

    Chunk boundaries are fixed, so the result does not depend on the
    number of worker threads.
    """
    chunks = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]

    def run(bounds):
        # every projection sees a full CHUNK-row block so that BLAS picks the
        # same kernel and row i never depends on how many rows follow it
        z = np.zeros((CHUNK, width))
        rows = bounds[1] - bounds[0]
        z[:rows] = _standard_normals(seed, *bounds, width)
        return project(z)[:rows]

    threads = thread_count()
    if threads == 1 or len(chunks) == 1:
        blocks = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, chunks))
    return np.concatenate(blocks)


def direction_label(d):
    if isinstance(d, Window):
        return d.label
    if isinstance(d, GridFunction):
        return d.label or "grid"
    raise TypeError(f"unsupported direction type {type(d).__name__}")


@dataclass(frozen=True)
class PathEnsemble:
    times: tuple
    extra_directions: tuple
    draws: np.ndarray
    seed: int
    method: Method
    density: str = ""
    info: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.draws.shape[0]

    @property
    def paths(self):
        return self.draws[:, : len(self.times)]

    @property
    def integrals(self):
        return self.draws[:, len(self.times):]


def joint_covariance(m, times, directions=(), cfg=DEFAULT_CONFIG):
    """Covariance of ``(B(t_1..t_k), <omega, f_1..f_d>)``."""
    items = [Window(float(t)) for t in times] + list(directions)
    k = len(items)
    cov = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            if i < len(times) and j < len(times):
                value = covariance(m, times[i], times[j], cfg)
            else:
                value = pairing(m, items[i], items[j], cfg)
            cov[i, j] = cov[j, i] = value
    return cov


def _cholesky_draws(cov, n, seed):
    k = cov.shape[0]
    live = np.flatnonzero(np.diag(cov) > 0.0)
    chol, jitter = factorize(cov[np.ix_(live, live)])
    draws = np.zeros((n, k))
    if live.size:
        draws[:, live] = _chunked(n, live.size, seed, lambda z: z @ chol.T)
    return draws, {"jitter": jitter}


@dataclass(frozen=True)
class FrequencyGrid:
    """Midpoint bins ``xi_k = (k - 1/2) dxi`` with exact bin masses of m."""

    dxi: float
    n_bins: int
    max_rel_error: float

    def nodes(self):
        return (np.arange(self.n_bins) + 0.5) * self.dxi

    def amplitudes(self, m):
        edges = np.arange(self.n_bins + 1) * self.dxi
        return np.sqrt(np.diff(m.integral(0.0, edges)) / math.pi)


def _synth_variance(m, dxi, n_bins, times):
    grid = FrequencyGrid(dxi, n_bins, math.nan)
    xi = grid.nodes()
    a2 = grid.amplitudes(m) ** 2
    t = np.abs(np.asarray(times, dtype=float))
    return np.array([np.sum(a2 * 4.0 * np.sin(0.5 * xi * ti) ** 2 / xi**2) for ti in t])


def frequency_grid(m, times, rel_tol=5e-3, max_bins=2**18, cfg=DEFAULT_CONFIG):
    """Smallest midpoint grid whose synthesized variance matches r(t) at every time.

    Starts from ``dxi = min(0.1, 0.5 / t_max)`` and a cutoff of 20 (or the band
    edge), then greedily halves ``dxi`` or doubles the cutoff, whichever
    helps more.
    """
    times = [abs(float(t)) for t in times if t != 0.0]
    if not times:
        return FrequencyGrid(1.0, 1, 0.0)
    target = np.array([variance_r(m, t, cfg) for t in times])
    dxi = min(0.1, 0.5 / max(times))
    upper = min(20.0, m.support)
    if m.support < math.inf:
        dxi = m.support / math.ceil(m.support / dxi)

    def error(d, u):
        n_bins = int(round(u / d))
        return float(np.max(np.abs(_synth_variance(m, d, n_bins, times) / target - 1.0))), n_bins

    err, n_bins = error(dxi, upper)
    while err > rel_tol:
        finer = error(dxi / 2.0, upper)
        wider = error(dxi, 2.0 * upper) if upper * 2.0 <= m.support else (math.inf, 0)
        if min(finer[1], wider[1] or max_bins + 1) > max_bins:
            raise RuntimeError(
                f"spectral synthesis needs more than {max_bins} bins for {m.label} "
                f"(relative variance error still {err:.2g})"
            )
        if finer[0] <= wider[0]:
            dxi /= 2.0
            err, n_bins = finer
        else:
            upper *= 2.0
            err, n_bins = wider
    return FrequencyGrid(dxi, n_bins, err)


def _spectral_draws(m, times, n, seed, rel_tol, cfg):
    grid = frequency_grid(m, times, rel_tol, cfg=cfg)
    xi = grid.nodes()
    amp = grid.amplitudes(m)
    t = np.asarray(times, dtype=float)
    sign = np.where(t < 0.0, -1.0, 1.0)
    basis_sin = (amp / xi)[:, None] * np.sin(np.outer(xi, t)) * sign
    basis_cos = (amp / xi)[:, None] * (2.0 * np.sin(0.5 * np.outer(xi, t)) ** 2) * sign
    basis = np.concatenate((basis_sin, basis_cos))
    draws = _chunked(n, basis.shape[0], seed, lambda z: z @ basis)
    return draws, {"dxi": grid.dxi, "n_bins": grid.n_bins, "variance_rel_error": grid.max_rel_error}


def sample(m, times, n, seed=0, method=Method.CHOLESKY, directions=(), cfg=DEFAULT_CONFIG,
           rel_tol=5e-3):
    """Draw ``n`` joint samples of ``B_m`` at ``times`` and ``<omega, f>`` for each direction.

    ``directions`` may hold grid functions or windows. The spectral method
    synthesises paths from independent frequency bins and refuses
    directions.
    """
    method = Method(method)
    times = tuple(float(t) for t in times)
    directions = tuple(directions)
    if n < 1:
        raise ValueError("n must be at least 1")
    if len(set(times)) != len(times):
        raise ValueError("sample times must be distinct")
    if method is Method.SPECTRAL:
        if directions:
            raise SpectralMethodError("the spectral method samples path values only; use cholesky for directions")
        draws, info = _spectral_draws(m, times, n, seed, rel_tol, cfg)
    else:
        cov = joint_covariance(m, times, directions, cfg)
        draws, info = _cholesky_draws(cov, n, seed)
    draws.setflags(write=False)
    return PathEnsemble(
        times=times,
        extra_directions=tuple(direction_label(d) for d in directions),
        draws=draws,
        seed=int(seed),
        method=method,
        density=m.label,
        info=info,
    )


def empirical_covariance(e):
    """Unbiased sample covariance of the ensemble columns and jackknife standard errors.

    Accepts a :class:`PathEnsemble` or a plain ``(n, k)`` array. With
    ``n = 2`` the jackknife is undefined and the errors are NaN.
    """
    x = np.asarray(e.draws if isinstance(e, PathEnsemble) else e, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("empirical_covariance needs at least two draws")
    xc = x - x.mean(axis=0)
    s = xc.T @ xc
    cov = s / (n - 1)
    if n < 3:
        return cov, np.full_like(cov, math.nan)
    # leave-one-out: C_(k) = (S - n/(n-1) x_k x_k^T) / (n-2)
    outer = xc[:, :, None] * xc[:, None, :]
    loo = (s - n / (n - 1) * outer) / (n - 2)
    return cov, _jackknife_spread(loo)


def _jackknife_spread(loo):
    n = loo.shape[0]
    dev = loo - loo.mean(axis=0)
    return np.sqrt((n - 1) / n * np.sum(dev * dev, axis=0))


def column_means(e):
    """Column means and their standard errors."""
    x = np.asarray(e.draws if isinstance(e, PathEnsemble) else e, dtype=float)
    return x.mean(axis=0), x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])


def weighted_moments(x, w):
    """Self-normalised weighted mean and covariance of the rows of ``x``, with jackknife errors.

    Returns ``(mean, mean_err, cov, cov_err)``.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    total = w.sum()
    mean = w @ x / total
    xc = x - mean
    wx = w[:, None] * xc
    s = xc.T @ wx
    cov = s / total
    # leave-one-out with the means recomputed: both sums drop row k
    rest = total - w
    mean_loo = -wx / rest[:, None]  # shift of the mean relative to ``mean``
    outer = xc[:, :, None] * xc[:, None, :]
    second = (s[None] - w[:, None, None] * outer) / rest[:, None, None]
    cov_loo = second - mean_loo[:, :, None] * mean_loo[:, None, :]
    return mean, _jackknife_spread(mean_loo), cov, _jackknife_spread(cov_loo)


@dataclass(frozen=True)
class GirsanovReport:
    times: tuple
    shift: np.ndarray
    weighted_mean: np.ndarray
    mean_stderr: np.ndarray
    weighted_cov: np.ndarray
    cov_stderr: np.ndarray
    analytic_cov: np.ndarray
    mean_weight: float
    weight_stderr: float
    ess: float
    n: int

    @property
    def mean_ok(self):
        return bool(np.all(np.abs(self.weighted_mean) <= 5.0 * self.mean_stderr))

    @property
    def cov_fraction(self):
        z = np.abs(self.weighted_cov - self.analytic_cov) / self.cov_stderr
        return float(np.mean(z <= 3.0))

    @property
    def weight_ok(self):
        return abs(self.mean_weight - 1.0) <= 5.0 * self.weight_stderr

    @property
    def passed(self):
        return self.mean_ok and self.cov_fraction >= 0.95 and self.weight_ok

    def to_dict(self):
        return {
            "times": list(self.times),
            "shift": self.shift.tolist(),
            "weighted_mean": self.weighted_mean.tolist(),
            "mean_stderr": self.mean_stderr.tolist(),
            "weighted_cov": self.weighted_cov.tolist(),
            "cov_stderr": self.cov_stderr.tolist(),
            "analytic_cov": self.analytic_cov.tolist(),
            "cov_within_3_stderr": self.cov_fraction,
            "mean_weight": self.mean_weight,
            "weight_stderr": self.weight_stderr,
            "ess": self.ess,
            "n": self.n,
            "passed": self.passed,
        }


def girsanov_check(m, f, times, n, seed=0, cfg=DEFAULT_CONFIG):
    """Reweight by the Wick exponential of ``<omega, f>`` and test the shifted process.

    Under weights ``exp(<omega, f> - ||T_m f||^2 / 2)`` the shifted path
    ``B(t) - (T_m f, T_m 1_t)`` should have mean zero and covariance K_m.
    ``f`` is a grid function or a :class:`Window`.
    """
    ens = sample(m, times, n, seed=seed, directions=[f], cfg=cfg)
    norm2 = pairing(m, f, f, cfg)
    shift = np.array([pairing(m, f, Window(t), cfg) for t in ens.times])
    w = np.exp(ens.integrals[:, 0] - 0.5 * norm2)
    ess = float(w.sum() ** 2 / np.sum(w * w))
    if ess < n / 10.0:
        warnings.warn(f"effective sample size {ess:.0f} is below n/10 = {n / 10:.0f}",
                      EffectiveSampleSizeWarning, stacklevel=2)
    mean, mean_err, cov, cov_err = weighted_moments(ens.paths - shift, w)
    analytic = joint_covariance(m, ens.times, (), cfg)
    return GirsanovReport(
        times=ens.times,
        shift=shift,
        weighted_mean=mean,
        mean_stderr=mean_err,
        weighted_cov=cov,
        cov_stderr=cov_err,
        analytic_cov=analytic,
        mean_weight=float(w.mean()),
        weight_stderr=float(w.std(ddof=1) / math.sqrt(n)),
        ess=ess,
        n=int(n),
    )
