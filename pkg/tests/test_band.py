import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsfband.band import (BandParams, build_band, critical_value, nadaraya_watson, nearest_pd,
                          sample_gaussian, silverman_bandwidth, smooth_diagonal,
                          sup_statistics)
from rsfband.covariance import CovarianceEstimate
from rsfband.data import make_grid
from rsfband.errors import InvalidArgumentError

from oracles import nearest_psd_factorized


def raw(m, grid=None):
    return CovarianceEstimate(np.asarray(m, float), "raw", grid)


def random_symmetric(seed, P, shift=0.0):
    A = np.random.default_rng(seed).normal(size=(P, P))
    return 0.5 * (A + A.T) + shift * np.eye(P)


def ar1(P, rho=0.9, scale=1.0):
    i = np.arange(P)
    return scale * rho ** np.abs(i[:, None] - i[None, :])


# -- projection ---------------------------------------------------------------

def test_identity_unchanged():
    out = nearest_pd(raw(np.eye(4)))
    assert out.stage == "projected" and np.array_equal(out.matrix, np.eye(4))


def test_negative_diagonal_entry_clipped_to_floor():
    out = nearest_pd(raw(np.diag([1.0, -0.5])))
    assert np.allclose(out.matrix, np.diag([1.0, 1e-8]), rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_projection_is_frobenius_nearest(seed):
    A = random_symmetric(seed, 10)
    assert np.linalg.eigvalsh(A)[0] < 0
    ours = nearest_pd(raw(A)).matrix
    oracle = nearest_psd_factorized(A)
    assert np.linalg.eigvalsh(ours)[0] > 0
    assert np.linalg.norm(ours - A) <= np.linalg.norm(oracle - A) + 1e-6
    assert np.allclose(ours, oracle, atol=1e-5)


@settings(max_examples=60)
@given(st.integers(0, 2**32), st.integers(2, 12), st.floats(-3, 3))
def test_projection_idempotent(seed, P, shift):
    once = nearest_pd(raw(random_symmetric(seed, P, shift)))
    twice = nearest_pd(once)
    assert np.max(np.abs(twice.matrix - once.matrix)) <= 1e-10


# -- diagonal smoothing --------------------------------------------------------

def test_constant_diagonal_unchanged():
    grid = make_grid(3.0, 30)
    cov = CovarianceEstimate(ar1(30, scale=2.0), "projected", grid)
    out = smooth_diagonal(cov, grid)
    assert out.stage == "smoothed"
    assert np.allclose(out.diagonal, 2.0, rtol=1e-14)
    off = ~np.eye(30, dtype=bool)
    assert np.array_equal(out.matrix[off], cov.matrix[off])


def test_spike_matches_hand_weights():
    P, spike = 15, 7
    grid = make_grid(1.5, P)
    t = grid.points.tolist()
    cov = CovarianceEstimate(np.diag(np.eye(P)[spike]), "projected", grid)
    out = smooth_diagonal(cov, grid).diagonal

    q1, _, q3 = statistics.quantiles(t, n=4, method="inclusive")
    h = 0.9 * min(statistics.stdev(t), (q3 - q1) / 1.34) * P ** -0.2
    assert silverman_bandwidth(grid.points) == pytest.approx(h, rel=1e-12)
    for i in (spike - 1, spike, spike + 1):
        weights = [math.exp(-0.5 * ((t[i] - tj) / h) ** 2) for tj in t]
        assert out[i] == pytest.approx(weights[spike] / sum(weights), rel=1e-12)
    assert out[spike] > out[spike + 1] > out[spike + 2] > out[spike + 3]
    assert out[spike] > out[spike - 1] > out[spike - 2] > out[spike - 3]


@given(st.integers(0, 2**32))
def test_smoothing_keeps_off_diagonal_when_still_pd(seed):
    grid = make_grid(2.0, 12)
    rng = np.random.default_rng(seed)
    scale = np.diag(np.exp(rng.normal(size=12) * 0.2))
    cov = CovarianceEstimate(scale @ ar1(12, 0.5) @ scale, "projected", grid)
    out = smooth_diagonal(cov, grid)
    off = ~np.eye(12, dtype=bool)
    lam = np.linalg.eigvalsh(out.matrix)
    if lam[0] > 1e-8 * lam[-1]:
        assert np.array_equal(out.matrix[off], cov.matrix[off])
    else:
        assert lam[0] > 0


def test_smoothing_reprojects_when_needed():
    grid = make_grid(1.0, 3)
    # strongly coupled ends around a near-zero middle: averaging the diagonal breaks PD
    m = np.array([[4, 0.19, 3.9], [0.19, 0.01, 0.19], [3.9, 0.19, 4]])
    cov = CovarianceEstimate(m, "projected", grid)
    replaced = m.copy()
    np.fill_diagonal(replaced, nadaraya_watson(grid.points, np.diag(m),
                                               silverman_bandwidth(grid.points)))
    assert np.linalg.eigvalsh(replaced)[0] < 0
    out = smooth_diagonal(cov, grid)
    assert out.stage == "smoothed"
    assert np.linalg.eigvalsh(out.matrix)[0] > 0
    assert np.allclose(out.matrix, nearest_pd(raw(replaced)).matrix, atol=1e-14)


def test_smoothing_off_passes_through():
    grid = make_grid(1.0, 5)
    cov = CovarianceEstimate(np.eye(5), "projected", grid)
    assert smooth_diagonal(cov, grid, enabled=False) is cov
    band = build_band(np.zeros(5), raw(np.eye(5), grid), BandParams(smoothing=False), seed=0)
    assert band.stage == "projected"


def test_degenerate_bandwidth():
    grid = make_grid(1.0, 6)
    cov = CovarianceEstimate(np.eye(6), "projected", grid)
    with pytest.raises(InvalidArgumentError):
        smooth_diagonal(cov, grid, bandwidth_rule="values")


# -- Gaussian draws -------------------------------------------------------------

def test_zero_covariance_draws_equal_center():
    center = np.array([0.5, 1.0, 2.0])
    draws = sample_gaussian(center, CovarianceEstimate(np.zeros((3, 3)), "projected"), 50, 1)
    assert np.array_equal(draws, np.tile(center, (50, 1)))


def test_identity_moments():
    M = 100_000
    center = np.array([1.0, -2.0, 0.0, 3.0])
    draws = sample_gaussian(center, CovarianceEstimate(np.eye(4), "projected"), M, 3)
    assert np.all(np.abs(draws.mean(axis=0) - center) <= 4 / math.sqrt(M))
    assert np.all(np.abs(draws.var(axis=0) - 1) <= 4 / math.sqrt(M))


def test_correlation():
    cov = CovarianceEstimate(np.array([[2.0, 0.8 * math.sqrt(6)], [0.8 * math.sqrt(6), 3.0]]),
                             "projected")
    draws = sample_gaussian(np.zeros(2), cov, 10_000, 5)
    assert np.corrcoef(draws.T)[0, 1] == pytest.approx(0.8, abs=0.05)


# -- critical value ---------------------------------------------------------------

def test_order_statistic_by_hand():
    samples = np.array([[1.0], [2.0], [3.0], [4.0]])
    for method in ("order", "grid"):
        assert critical_value(samples, [0.0], [1.0], 0.25, method) == pytest.approx(3.0)
        assert critical_value(samples, [0.0], [1.0], 1e-9, method) == pytest.approx(4.0)


def test_all_zero_sd_rejected():
    with pytest.raises(InvalidArgumentError):
        critical_value(np.ones((5, 3)), np.zeros(3), np.zeros(3), 0.1)


@settings(max_examples=40)
@given(st.integers(0, 2**32), st.integers(100, 600), st.floats(0.01, 0.5))
def test_order_and_grid_agree_within_one_step(seed, M, alpha):
    rng = np.random.default_rng(seed)
    samples = rng.normal(size=(M, 8))
    s = rng.uniform(0.5, 2, 8)
    order = critical_value(samples, np.zeros(8), s, alpha, "order")
    grid = critical_value(samples, np.zeros(8), s, alpha, "grid", (0.0, 20.0), 1e-3)
    assert order <= grid + 1e-12 and grid - order <= 1e-3 + 1e-12
    stats = sup_statistics(samples, np.zeros(8), s)
    assert np.mean(stats <= order) >= 1 - alpha - 1e-12


@given(st.integers(0, 2**32), st.lists(st.floats(0.01, 0.99), min_size=2, max_size=6))
def test_zeta_nonincreasing_in_alpha(seed, alphas):
    samples = np.random.default_rng(seed).normal(size=(200, 5))
    zetas = [critical_value(samples, np.zeros(5), np.ones(5), a) for a in sorted(alphas)]
    assert all(a >= b for a, b in zip(zetas, zetas[1:]))


# -- bands --------------------------------------------------------------------

@pytest.fixture
def setup():
    grid = make_grid(2.0, 25)
    center = np.cumsum(np.linspace(0, 0.1, 25))
    sigma = raw(ar1(25, 0.8, 0.01) - 0.002 * np.eye(25), grid)
    return grid, center, sigma


def test_band_encloses_samples_and_width(setup):
    grid, center, sigma = setup
    for smoothing in (True, False):
        params = BandParams(alpha=0.1, M=500, smoothing=smoothing)
        band = build_band(center, sigma, params, seed=4)
        assert band.sample_enclosed >= 1 - params.alpha
        assert np.allclose(band.width, 2 * band.zeta * band.s, rtol=1e-12, atol=1e-15)
        assert band.contains(center)
        assert np.array_equal(band.t, grid.points)


def test_band_deterministic(setup):
    grid, center, sigma = setup
    a = build_band(center, sigma, BandParams(), seed=9)
    b = build_band(center, sigma, BandParams(), seed=9)
    assert a.zeta == b.zeta and np.array_equal(a.lower, b.lower)


def test_center_shift_moves_band_only(setup):
    grid, center, sigma = setup
    a = build_band(center, sigma, BandParams(), seed=2)
    b = build_band(center + 5.0, sigma, BandParams(), seed=2)
    assert b.zeta == pytest.approx(a.zeta, rel=1e-12)
    assert np.allclose(b.lower - 5.0, a.lower, atol=1e-12)
    assert np.allclose(b.upper - 5.0, a.upper, atol=1e-12)


def test_zero_covariance_has_no_band():
    grid = make_grid(1.0, 4)
    with pytest.raises(InvalidArgumentError):
        build_band(np.zeros(4), raw(np.zeros((4, 4)), grid), BandParams(), seed=0)


def test_zero_variance_points_have_zero_width():
    grid = make_grid(1.0, 4)
    m = np.diag([0.0, 1.0, 2.0, 1.0])
    band = build_band(np.ones(4), raw(m, grid), BandParams(smoothing=False), seed=0)
    assert band.width[0] == 0 and np.all(band.width[1:] > 0)


def test_band_params_validation():
    for kw in [dict(alpha=0), dict(alpha=1), dict(M=10), dict(critical="x"),
               dict(c_bounds=(2, 1)), dict(bandwidth_rule="y")]:
        with pytest.raises(InvalidArgumentError):
            BandParams(**kw)
