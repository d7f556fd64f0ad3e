import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

import oracles
from conftest import random_dataset
from dyadkde.data import DegenerateInputError, DyadicDataset, DyadicInputError
from dyadkde.estimator import check_grid, fhat, make_grid, pair_kernels, weighted_fhat
from dyadkde.kernels import KernelSpec
from dyadkde.simulation import PiParams, generate

DOMAIN = (-2.0, 2.0)


def test_single_pair_value():
    ds = DyadicDataset.complete(2, [0.0])
    spec = KernelSpec("epanechnikov", 2, 1.0, (-5.0, 5.0))
    est = fhat(ds, spec, [0.0, 0.5])
    assert est.values[0] == pytest.approx(0.75, abs=1e-15)
    assert est.values[1] == pytest.approx(0.75 * (1 - 0.25), abs=1e-15)


def test_grid_checks():
    assert make_grid(DOMAIN, 5).tolist() == [-2, -1, 0, 1, 2]
    with pytest.raises(ValueError):
        make_grid(DOMAIN, 0)
    with pytest.raises(ValueError):
        check_grid([0.0, 3.0], DOMAIN)
    with pytest.raises(ValueError):
        check_grid([0.5, 0.1], DOMAIN)


@pytest.mark.parametrize("order", [2, 4])
@pytest.mark.parametrize("missing", [0.0, 0.3])
def test_matches_double_sum(rng, order, missing):
    ds = random_dataset(rng, 6, missing=missing)
    spec = KernelSpec("epanechnikov", order, 0.8, DOMAIN)
    grid = make_grid(DOMAIN, 9)
    K = oracles.kernel_array(ds, spec, grid)
    expected = oracles.fhat_double_sum(K, ds.n_present)
    np.testing.assert_allclose(fhat(ds, spec, grid).values, expected, atol=1e-12)


def test_weighted_matches_double_sum(rng):
    ds = random_dataset(rng, 6, missing=0.2)
    spec = KernelSpec("triangular", 4, 0.9, DOMAIN)
    grid = make_grid(DOMAIN, 7)
    w = rng.uniform(0, 3, 6)
    K = oracles.kernel_array(ds, spec, grid)
    expected = oracles.weighted_double_sum(K, w, ds.n_present)
    np.testing.assert_allclose(weighted_fhat(ds, w, spec, grid).values, expected, atol=1e-12)


def test_unit_weights_reduce_exactly(rng):
    ds = random_dataset(rng, 12, missing=0.1)
    spec = KernelSpec("epanechnikov", 4, 0.6, DOMAIN)
    grid = make_grid(DOMAIN, 11)
    a = fhat(ds, spec, grid).values
    b = weighted_fhat(ds, np.ones(12), spec, grid).values
    assert np.array_equal(a, b)


def test_zero_weight_drops_node(rng):
    ds = random_dataset(rng, 8)
    spec = KernelSpec("epanechnikov", 2, 0.7, DOMAIN)
    grid = make_grid(DOMAIN, 9)
    w = np.ones(8)
    w[3] = 0.0
    i, j = ds.pairs()
    keep = (i != 3) & (j != 3)
    reduced = DyadicDataset(8, np.where(keep, ds.values, np.nan), keep)
    expected = fhat(reduced, spec, grid).values * reduced.n_present / ds.n_present
    np.testing.assert_allclose(weighted_fhat(ds, w, spec, grid).values, expected, atol=1e-14)


def test_weight_validation(rng):
    ds = random_dataset(rng, 5)
    spec = KernelSpec("epanechnikov", 2, 0.7, DOMAIN)
    with pytest.raises(DyadicInputError):
        weighted_fhat(ds, np.ones(4), spec, [0.0, 1.0])
    with pytest.raises(DyadicInputError):
        weighted_fhat(ds, -np.ones(5), spec, [0.0, 1.0])


def test_no_present_pairs():
    ds = DyadicDataset(3, [np.nan] * 3, [False] * 3)
    with pytest.raises(DegenerateInputError):
        fhat(ds, KernelSpec("epanechnikov", 2, 0.5, DOMAIN), [0.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**32 - 1))
def test_permutation_invariance(n, seed):
    r = np.random.default_rng(seed)
    ds = random_dataset(r, n, missing=0.2)
    spec = KernelSpec("epanechnikov", 4, 0.7, DOMAIN)
    grid = make_grid(DOMAIN, 6)
    a = fhat(ds, spec, grid).values
    b = fhat(ds.relabel(r.permutation(n)), spec, grid).values
    np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_linearity_in_kernel(seed, alpha):
    r = np.random.default_rng(seed)
    ds = random_dataset(r, 7)
    grid = make_grid(DOMAIN, 5)
    s2 = KernelSpec("epanechnikov", 2, 0.6, DOMAIN)
    s4 = KernelSpec("epanechnikov", 4, 0.6, DOMAIN)
    pooled = alpha * pair_kernels(ds, s2, grid) + (1 - alpha) * pair_kernels(ds, s4, grid)
    lhs = fhat(ds, s2, grid, kernels=pooled).values
    rhs = alpha * fhat(ds, s2, grid).values + (1 - alpha) * fhat(ds, s4, grid).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_locality(rng):
    ds = random_dataset(rng, 8)
    spec = KernelSpec("epanechnikov", 2, 0.3, DOMAIN)
    grid = np.array([-1.0, 0.0, 1.0])
    vals = np.array(ds.values)
    far = np.min(np.abs(vals[:, None] - grid[None, :]), axis=1) > 0.3
    if not far.any():
        vals[0] = 5.0
        far[0] = True
        ds = DyadicDataset.complete(8, vals)
    moved = np.where(far, vals + 0.01 * np.sign(vals), vals)
    # moving away from the grid keeps those values out of every support
    a = fhat(ds, spec, grid).values
    b = fhat(DyadicDataset.complete(8, moved), spec, grid).values
    assert np.array_equal(a, b)


def test_large_sample_near_truth():
    pi = PiParams(0.5, 0.0, 0.5)
    ds, _ = generate(pi, 3000, seed=11)
    spec = KernelSpec("epanechnikov", 2, 0.16, DOMAIN)
    est = fhat(ds, spec, [0.0])
    assert est.values[0] == pytest.approx(norm.pdf(1.0), abs=0.01)


def test_integral_diagnostic(rng):
    ds = random_dataset(rng, 40, scale=0.5)
    spec = KernelSpec("epanechnikov", 4, 0.4, DOMAIN)
    est = fhat(ds, spec, make_grid(DOMAIN, 100))
    assert 0.8 <= est.integral() <= 1.2
    assert est.meta["normalization"] == "present_pairs"
