import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_wick.kernel import gram
from spectral_wick.operator_tm import GridFunction, Window
from spectral_wick.sampling import (
    THREADS_ENV,
    EffectiveSampleSizeWarning,
    Method,
    SpectralMethodError,
    column_means,
    draw_stream,
    empirical_covariance,
    frequency_grid,
    girsanov_check,
    joint_covariance,
    sample,
    weighted_moments,
)
from spectral_wick.spectral import band_limited, fractional, white

# numpy's Philox with key 0, counter [0, 0, 0, 0]
FIRST_NORMALS = [0.15929546600623282, -1.7741885208017214, 1.3265118818830892]
# white noise, times (1, 2), seed 5: B(1) = Z0, B(2) = Z0 + Z1 from the Cholesky factor
WHITE_SEED5 = [[1.4377730333055703, 2.2738806900917643], [-0.32189906837996946, -1.3821082198101156],
               [-0.08274007247894571, -0.7846696321572451]]


def test_frozen_streams():
    assert draw_stream(0, 0).standard_normal(3).tolist() == FIRST_NORMALS
    assert sample(white(), [1.0, 2.0], 3, seed=5).draws.tolist() == WHITE_SEED5


@pytest.mark.parametrize("method", list(Method))
def test_thread_count_does_not_matter(monkeypatch, method):
    runs = []
    for threads in ("1", "8"):
        monkeypatch.setenv(THREADS_ENV, threads)
        runs.append(sample(fractional(0.75), [0.5, 1.0, 2.0], 1500, seed=11, method=method).draws)
    assert np.array_equal(*runs)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**63), n=st.integers(1, 1100))
def test_prefix_property(seed, n):
    # draw i depends only on (seed, i)
    small = sample(band_limited(1.0), [1.0, 2.0], n, seed=seed).draws
    big = sample(band_limited(1.0), [1.0, 2.0], n + 7, seed=seed).draws
    assert np.array_equal(small, big[:n])


def test_draws_are_read_only():
    e = sample(white(), [1.0], 4, seed=0)
    with pytest.raises(ValueError):
        e.draws[0, 0] = 1.0


def test_zero_time_column_is_exact_zero():
    e = sample(fractional(0.6), [0.0, 1.0], 50, seed=3)
    assert not np.any(e.paths[:, 0])


def test_input_validation():
    with pytest.raises(ValueError):
        sample(white(), [1.0, 1.0], 10)
    with pytest.raises(ValueError):
        sample(white(), [1.0], 0)
    with pytest.raises(SpectralMethodError):
        sample(white(), [1.0], 10, method="spectral", directions=[Window(1.0)])


@pytest.mark.parametrize("m", [white(), fractional(0.75), band_limited(1.0)], ids=lambda m: m.label)
@pytest.mark.parametrize("method", list(Method))
def test_covariance_within_stderr(m, method):
    times = [0.25, 0.5, 1.0, 2.0]
    e = sample(m, times, 8000, seed=21, method=method)
    emp, err = empirical_covariance(e)
    z = np.abs(emp - gram(m, times).values) / err
    assert np.mean(z <= 3.0) >= 0.9
    means, mean_err = column_means(e)
    assert np.all(np.abs(means) <= 5 * mean_err)


def test_frequency_grid_meets_tolerance():
    g = frequency_grid(fractional(0.75), [0.5, 1.0, 3.0], rel_tol=1e-3)
    assert g.max_rel_error <= 1e-3
    # exact bin masses: the first bin of a singular density is finite
    assert np.all(np.isfinite(g.amplitudes(fractional(0.9))))


def test_joint_covariance_with_directions():
    m = white()
    bump = GridFunction.gaussian_bump(0.5, 0.25)
    cov = joint_covariance(m, [1.0], [bump, Window(2.0)])
    np.testing.assert_allclose(cov, cov.T)
    # white noise: (1_1, 1_2) = 1 and (s, 1_1) = integral of s over [0, 1]
    assert cov[0, 2] == pytest.approx(1.0, abs=1e-12)
    assert cov[0, 1] == pytest.approx(bump.step * bump.samples[(bump.grid >= 0) & (bump.grid <= 1)].sum(), abs=2e-3)


def test_jackknife_small_n():
    _, err = empirical_covariance(np.array([[1.0, 2.0], [3.0, 5.0]]))
    assert np.all(np.isnan(err))
    with pytest.raises(ValueError):
        empirical_covariance(np.ones((1, 2)))


def test_weighted_moments_uniform_weights_reduce():
    x = np.random.default_rng(0).normal(size=(400, 3))
    mean, _, cov, _ = weighted_moments(x, np.ones(400))
    np.testing.assert_allclose(mean, x.mean(axis=0), atol=1e-14)
    np.testing.assert_allclose(cov, np.cov(x.T, ddof=0), atol=1e-13)


def test_jackknife_matches_brute_force():
    x = np.random.default_rng(1).normal(size=(30, 2))
    _, err = empirical_covariance(x)
    loo = np.array([np.cov(np.delete(x, k, axis=0).T) for k in range(30)])
    brute = np.sqrt(29 / 30 * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    np.testing.assert_allclose(err, brute, rtol=1e-10)


def test_girsanov_white():
    rep = girsanov_check(white(), Window(1.0), [0.5, 1.0, 1.5, 2.0], 20000, seed=2)
    assert rep.passed
    np.testing.assert_allclose(rep.shift, [0.5, 1.0, 1.0, 1.0], atol=1e-12)


def test_girsanov_low_ess_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        girsanov_check(white(), Window(25.0), [1.0], 200, seed=0)
    assert any(issubclass(w.category, EffectiveSampleSizeWarning) for w in caught)


def test_gaussianity():
    from scipy import stats

    n = 20000
    e = sample(fractional(0.75), [0.5, 1.0, 2.0], n, seed=8, method="spectral")
    assert np.all(np.abs(stats.skew(e.paths)) < 5 * np.sqrt(6 / n))
    assert np.all(np.abs(stats.kurtosis(e.paths)) < 5 * np.sqrt(24 / n))


def test_girsanov_zero_direction_reduces():
    zero = GridFunction(0.0, 0.01, np.zeros(400), label="zero")
    times = [0.5, 1.0, 2.0]
    rep = girsanov_check(white(), zero, times, 3000, seed=4)
    assert rep.mean_weight == 1.0 and rep.weight_stderr == 0.0
    cov, _ = empirical_covariance(sample(white(), times, 3000, seed=4, directions=[zero]).paths)
    np.testing.assert_allclose(rep.weighted_cov, cov * (2999 / 3000), rtol=1e-12)


def test_empirical_covariance_examples():
    cov, _ = empirical_covariance(np.array([[0.0], [2.0]]))
    assert cov[0, 0] == 2.0
    cov, _ = empirical_covariance(np.full((10, 2), 3.0))
    assert not np.any(cov)
