import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import kolmogorov, ndtr

from stochaction.stats import (
    default_functionals,
    gaussian_stream,
    kolmogorov_sf,
    ks_statistic,
    ks_test,
    martingale_test,
    mc_estimate,
)


def uniform_cdf(x):
    return np.clip(x, 0.0, 1.0)


def test_stream_is_deterministic():
    a = gaussian_stream(5, (20, 8, 2))
    b = gaussian_stream(5, (20, 8, 2))
    np.testing.assert_array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, gaussian_stream(6, (20, 8, 2)).increments)


def test_stream_independent_of_threads_and_path_count():
    one = gaussian_stream(9, (64, 16, 1), threads=1).increments
    four = gaussian_stream(9, (64, 16, 1), threads=4).increments
    np.testing.assert_array_equal(one, four)
    np.testing.assert_array_equal(gaussian_stream(9, (10, 16, 1)).increments, one[:10])


def test_stream_moments():
    z = gaussian_stream(1, (100_000, 1, 1), dt=1.0).increments
    assert abs(z.mean()) < 0.02
    w = gaussian_stream(2, (2000, 64, 1)).increments
    assert abs(w.var() / (1 / 64) - 1) < 0.05


@pytest.mark.parametrize("shape", [(0, 4, 1), (3, 0, 1), (2, 2)])
def test_stream_rejects_bad_shapes(shape):
    with pytest.raises(ValueError):
        gaussian_stream(0, shape)


def test_brownian_cumulates_increments():
    nb = gaussian_stream(3, (4, 10, 2))
    B = nb.brownian
    assert np.all(B[:, 0] == 0)
    np.testing.assert_allclose(np.diff(B, axis=1), nb.increments, atol=1e-15)


def test_ks_hand_example():
    stat, _ = ks_test(np.array([0.25, 0.5, 0.75]), uniform_cdf, min_samples=1)
    assert stat == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("n", [20, 57, 400])
def test_ks_uniform_interleaving(n):
    q = (np.arange(1, n + 1) - 0.5) / n
    assert ks_statistic(q, uniform_cdf) == pytest.approx(0.5 / n, abs=1e-14)


def test_ks_requires_enough_finite_samples():
    with pytest.raises(ValueError):
        ks_test(np.linspace(0, 1, 10), uniform_cdf)
    with pytest.raises(ValueError):
        ks_test(np.r_[np.linspace(0, 1, 30), np.nan], uniform_cdf)


@pytest.mark.parametrize("x", [0.05, 0.3, 0.6, 0.9, 1.0, 1.36, 1.8, 2.5, 4.0])
def test_kolmogorov_series_matches_scipy(x):
    assert kolmogorov_sf(x) == pytest.approx(kolmogorov(x), abs=1e-12)


def test_ks_level_on_target_draws():
    passes = 0
    for seed in range(100):
        x = np.random.default_rng(seed).standard_normal(10_000)
        passes += ks_test(x, ndtr)[1] > 0.01
    assert passes >= 98


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_ks_invariant_under_increasing_transform(seed):
    x = np.random.default_rng(seed).standard_normal(50)
    d1 = ks_statistic(x, ndtr)
    d2 = ks_statistic(np.exp(x), lambda y: ndtr(np.log(y)))
    assert d1 == pytest.approx(d2, abs=1e-12)


def _brownian(seed, m=5000, n=64):
    return gaussian_stream(seed, (m, n, 1)).brownian[:, :, 0]


def test_martingale_test_brownian_passes():
    B = _brownian(0)
    times = np.linspace(0, 1, B.shape[1])
    rep = martingale_test(B, times, paths=B[:, :, None], pairs=[(0.5, 1.0)])
    assert rep.passed
    rep = martingale_test(B, times, paths=B[:, :, None])
    assert rep.passed and rep.t_stats.shape == (1, 4, len(default_functionals(1)))


def ou_exact(seed, m, n):
    """OU paths dZ = dB + Z dt from exact Gaussian transitions (independent of the simulator)."""
    rng = np.random.default_rng(seed)
    dt = 1 / n
    Z = np.zeros((m, n + 1))
    q = np.sqrt((np.exp(2 * dt) - 1) / 2)
    for i in range(n):
        Z[:, i + 1] = np.exp(dt) * Z[:, i] + q * rng.standard_normal(m)
    return Z


def test_martingale_test_ou_fails_with_population_value():
    Z = ou_exact(11, 50_000, 64)
    times = np.linspace(0, 1, 65)
    rep = martingale_test(Z, times, pairs=[(0.5, 1.0)])
    assert not rep.passed
    assert rep.cell((0.5, 1.0), "Z_s") > 20
    est = mc_estimate((Z[:, -1] - Z[:, 32]) * Z[:, 32])
    population = (np.exp(0.5) - 1) * (np.e - 1) / 2
    assert population == pytest.approx(0.557343, abs=1e-6)
    assert abs(est.value - population) < 4 * est.se


def test_martingale_test_constant_process():
    Z = np.full((1500, 9), 3.0)
    rep = martingale_test(Z, np.linspace(0, 1, 9))
    assert rep.passed
    assert rep.max_abs_t == 0.0
    assert any(f == "Z_s" for _, _, f in rep.degenerate)


def test_martingale_test_preconditions():
    Z = np.zeros((10, 5))
    with pytest.raises(ValueError):
        martingale_test(Z, np.linspace(0, 1, 5))
    with pytest.raises(ValueError):
        martingale_test(np.zeros((2000, 5)), np.linspace(0, 1, 5), pairs=[(0.5, 0.5)])


def test_martingale_test_false_alarm_rate():
    alpha = 0.05
    passes = sum(martingale_test(_brownian(100 + s, 1000, 16), np.linspace(0, 1, 17), alpha=alpha).passed for s in range(50))
    assert passes >= np.ceil((1 - alpha) * 50)


def test_mc_estimate():
    est = mc_estimate(np.array([1.0, 2.0, 3.0, 4.0]))
    assert est.value == 2.5
    assert est.se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
