import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rsfband.covariance import (CovarianceEstimate, complete_cov_components,
                                complete_cov_oracle, complete_from_curves, estimate_ch_b,
                                estimate_cs_b, estimate_sigma, hypergeom_weight,
                                hypergeom_weights)
from rsfband.data import TimeGrid, get_scenario, make_grid, simulate_scenario
from rsfband.errors import InvalidArgumentError
from rsfband.forest import mean_curve, sample_matched_pairs
from rsfband.tree import TreeParams, fit_indices

from oracles import pair_enumeration_cov, two_pass_variance

curve_matrices = st.integers(1, 12).flatmap(lambda B: st.integers(1, 6).flatmap(
    lambda P: arrays(np.float64, (2 * B, P), elements=st.floats(-50, 50))))


def mean_kernel(y):
    def kernel(idx, grid):
        return np.minimum(y[idx][:, None], grid.points[None, :]).mean(axis=0)
    return kernel


def test_identical_trees_give_zero():
    curves = np.tile([0.0, 0.4, 1.1], (8, 1))
    assert np.array_equal(estimate_ch_b(curves), np.zeros((3, 3)))
    assert np.array_equal(estimate_cs_b(curves, curves[0]), np.zeros((3, 3)))
    assert np.array_equal(estimate_sigma(curves, curves[0]).matrix, np.zeros((3, 3)))


def test_single_pair_tree_term():
    curves = np.array([[0.0, 1.0, 2.0], [0.0, 0.0, 0.0]])
    ch = estimate_ch_b(curves)
    assert ch[1, 2] == 1.0
    assert np.array_equal(ch, 0.5 * np.outer([0, 1, 2], [0, 1, 2]))


def test_sample_term_two_trees():
    curves = np.array([[0.0, 1.0], [0.0, 3.0]])
    cs = estimate_cs_b(curves, [0.0, 2.0])
    assert cs[1, 1] == 1.0 and cs[0, 0] == 0.0


@given(curve_matrices)
def test_terms_are_psd(curves):
    ub = curves.mean(axis=0)
    for m in (estimate_ch_b(curves), estimate_cs_b(curves, ub)):
        assert np.array_equal(m, m.T)
        lam = np.linalg.eigvalsh(m)
        assert lam[0] >= -1e-9 * max(1.0, abs(lam[-1]))


@given(curve_matrices)
def test_matches_scalar_recomputation(curves):
    B = curves.shape[0] // 2
    ub = curves.mean(axis=0)
    ch, cs = estimate_ch_b(curves), estimate_cs_b(curves, ub)
    sigma = estimate_sigma(curves, ub).matrix
    P = curves.shape[1]
    for j in range(P):
        for l in range(P):
            h = sum((curves[2 * b, j] - curves[2 * b + 1, j]) *
                    (curves[2 * b, l] - curves[2 * b + 1, l]) for b in range(B)) / (2 * B)
            s = sum((c[j] - ub[j]) * (c[l] - ub[l]) for c in curves) / (2 * B)
            assert ch[j, l] == pytest.approx(h, rel=1e-9, abs=1e-9)
            assert cs[j, l] == pytest.approx(s, rel=1e-9, abs=1e-9)
        # on the diagonal the covariance reduces to the variance estimator
        var_h = np.mean((curves[0::2, j] - curves[1::2, j]) ** 2) / 2
        var_s = two_pass_variance(curves[:, j], ub[j])
        assert sigma[j, j] == pytest.approx(var_h - var_s, rel=1e-9, abs=1e-9)


def test_raw_estimate_keeps_negative_diagonal():
    # pair differences are tiny while trees spread widely around the mean
    curves = np.array([[0.0, 1.0], [0.0, 1.01], [0.0, 3.0], [0.0, 3.01]])
    sigma = estimate_sigma(curves, mean_curve(curves))
    assert sigma.stage == "raw" and sigma.matrix[1, 1] < 0


def test_curve_shape_errors():
    with pytest.raises(InvalidArgumentError):
        estimate_ch_b(np.zeros((3, 2)))
    with pytest.raises(InvalidArgumentError):
        estimate_cs_b(np.zeros((2, 2)), np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        CovarianceEstimate(np.zeros((2, 3)))
    with pytest.raises(InvalidArgumentError):
        CovarianceEstimate(np.diag([1.0, -1.0]), stage="projected")


def test_hypergeometric_examples():
    assert hypergeom_weights(2, 4).tolist() == pytest.approx([1 / 6, 4 / 6, 1 / 6], abs=1e-15)
    assert hypergeom_weight(2, 2, 10) == pytest.approx(1 / 45, rel=1e-15)
    assert hypergeom_weight(0, 2, 3) == 0.0
    for n, k in [(10, 3), (100, 50), (1000, 500)]:
        assert abs(math.fsum(hypergeom_weights(k, n)) - 1) <= 1e-12


@given(st.integers(1, 60), st.data())
def test_hypergeometric_exact(n, data):
    k = data.draw(st.integers(0, n))
    d = data.draw(st.integers(0, k))
    exact = Fraction(math.comb(k, d) * math.comb(n - k, k - d), math.comb(n, k))
    assert hypergeom_weight(d, k, n) == float(exact)


@pytest.mark.parametrize("d,k,n", [(-1, 2, 4), (3, 2, 4), (1, 5, 4)])
def test_hypergeometric_ranges(d, k, n):
    with pytest.raises(InvalidArgumentError):
        hypergeom_weight(d, k, n)


def test_oracle_constant_kernel_is_zero():
    cov = complete_cov_oracle(8, 3, lambda idx, grid: np.ones(grid.P), make_grid(1, 4))
    assert np.allclose(cov, 0, atol=1e-15)


def test_oracle_rejects_overlapping_only_and_large_problems():
    const = lambda idx, grid: np.ones(grid.P)  # noqa: E731
    with pytest.raises(InvalidArgumentError):
        complete_cov_oracle(6, 4, const, make_grid(1, 2))
    # k = n/2 still has one disjoint partner (the complement) per subsample
    assert complete_cov_components(6, 3, const, make_grid(1, 2)).c_h.shape == (2, 2)
    with pytest.raises(InvalidArgumentError, match="184756"):
        complete_cov_oracle(20, 10, const, make_grid(1, 2))


def test_oracle_matches_pair_enumeration_mean_kernel():
    rng = np.random.default_rng(1)
    y = rng.exponential(size=7)
    grid = TimeGrid(np.array([0.2, 0.7, 1.5]))
    comp = complete_cov_components(7, 3, mean_kernel(y), grid)
    expected, counts = pair_enumeration_cov(comp.curves, comp.subsets, 7, 3)
    assert counts[0] == math.comb(7, 3) * math.comb(4, 3)
    assert np.allclose(comp.cov, expected, rtol=0, atol=1e-13)


def test_oracle_matches_pair_enumeration_tree_kernel():
    data = simulate_scenario(get_scenario(1), 10, seed=3)
    grid = make_grid(2.5, 5)
    x0 = np.full(6, 0.5)
    params = TreeParams(mtry=2, min_node_size=1)

    def kernel(idx, g):
        if not data.event[idx].any():
            return np.zeros(g.P)
        return fit_indices(data, idx, params, seed=0).predict_chf(x0, g)

    comp = complete_cov_components(10, 4, kernel, grid)
    expected, _ = pair_enumeration_cov(comp.curves, comp.subsets, 10, 4)
    assert np.allclose(comp.cov, expected, rtol=1e-10, atol=1e-13)


def test_complete_terms_direct():
    rng = np.random.default_rng(4)
    subsets = np.array(list(itertools.combinations(range(6), 2)))
    curves = rng.normal(size=(len(subsets), 2))
    comp = complete_from_curves(subsets, curves, 6)
    assert np.allclose(comp.c_s, np.cov(curves.T, bias=True), atol=1e-14)
    pairs = [(i, j) for i in range(len(subsets)) for j in range(len(subsets))
             if not set(subsets[i]) & set(subsets[j])]
    direct = sum(0.5 * np.outer(curves[i] - curves[j], curves[i] - curves[j])
                 for i, j in pairs) / len(pairs)
    assert np.allclose(comp.c_h, direct, atol=1e-14)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_incomplete_terms_unbiased_for_mean_kernel(seed):
    # mean kernel: cheap enough to average over many pair samplings
    n, k, B, reps = 8, 3, 4, 20_000
    rng = np.random.default_rng(seed)
    y = rng.exponential(size=n)
    grid = TimeGrid(np.array([0.3, 1.0]))
    comp = complete_cov_components(n, k, mean_kernel(y), grid)
    pairs = sample_matched_pairs(n, k, B * reps, seed=seed).reshape(reps, 2 * B, k)
    curves = np.minimum(y[pairs][..., None], grid.points).mean(axis=2)   # (reps, 2B, P)
    diff = curves[:, 0::2] - curves[:, 1::2]
    ch = np.einsum("rbi,rbj->rij", diff, diff) / (2 * B)
    centered = curves - curves.mean(axis=1, keepdims=True)
    cs = np.einsum("rbi,rbj->rij", centered, centered) / (2 * B)
    target_s = (1 - 1 / B) * comp.c_s + comp.c_h / (2 * B)
    for est, target in [(ch, comp.c_h), (cs, target_s)]:
        se = est.std(axis=0, ddof=1) / math.sqrt(reps)
        assert np.all(np.abs(est.mean(axis=0) - target) <= 4 * se + 1e-15)
