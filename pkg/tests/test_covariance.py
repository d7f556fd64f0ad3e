import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_dataset
from dyadkde.covariance import (
    CovMatrix,
    NormalizationError,
    lipschitz_bound,
    project_psd,
    psd_project,
    sigma_hat,
)
from dyadkde.data import DegenerateInputError
from dyadkde.estimator import fhat, make_grid
from dyadkde.kernels import KernelSpec, LipschitzConstants, lipschitz_constants
from dyadkde.simulation import PiParams, generate

DOMAIN = (-2.0, 2.0)


def lipschitz_ok(m, grid, bound, slack=1e-12):
    """Full triple loop: |M(w, w') - M(w, w'')| <= bound |w' - w''|."""
    d = len(grid)
    scale = max(np.max(np.abs(m)), 1e-300)
    for a in range(d):
        for b in range(d):
            for c in range(d):
                if abs(m[a, b] - m[a, c]) > bound * abs(grid[b] - grid[c]) + slack * scale:
                    return False
    return True


@pytest.mark.parametrize("n", [3, 5, 8, 10])
@pytest.mark.parametrize("order", [2, 4])
def test_matches_triple_sum(rng, n, order):
    ds = random_dataset(rng, n)
    spec = KernelSpec("epanechnikov", order, 0.9, DOMAIN)
    grid = make_grid(DOMAIN, 6)
    K = oracles.kernel_array(ds, spec, grid)
    np.testing.assert_allclose(sigma_hat(ds, spec, grid).entries, oracles.sigma_triple_sum(K), atol=1e-10)


def test_missing_edges_scale_by_mixture_weight(rng):
    ds = random_dataset(rng, 8, missing=0.3)
    spec = KernelSpec("triangular", 2, 0.9, DOMAIN)
    grid = make_grid(DOMAIN, 5)
    K = oracles.kernel_array(ds, spec, grid)
    expected = oracles.sigma_triple_sum(K) / ds.mixture_weight**2
    np.testing.assert_allclose(sigma_hat(ds, spec, grid).entries, expected, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 25), st.integers(0, 2**32 - 1))
def test_exactly_symmetric(n, seed):
    r = np.random.default_rng(seed)
    ds = random_dataset(r, n, missing=0.1)
    m = sigma_hat(ds, KernelSpec("epanechnikov", 4, 0.5, DOMAIN), make_grid(DOMAIN, 7)).entries
    assert np.array_equal(m, m.T)


def test_needs_three_nodes():
    ds = random_dataset(np.random.default_rng(0), 2)
    with pytest.raises(DegenerateInputError):
        sigma_hat(ds, KernelSpec("epanechnikov", 2, 0.5, DOMAIN), [0.0, 1.0])


@pytest.mark.slow
def test_monte_carlo_variance():
    pi = PiParams(0.2, 0.2, 0.6)
    spec = KernelSpec("epanechnikov", 2, 0.35, DOMAIN)
    grid = np.array([-1.0, 0.0, 0.5, 1.0, 1.5])
    est, diag = [], []
    for rep in range(400):
        ds, _ = generate(pi, 400, seed=10_000 + rep)
        est.append(fhat(ds, spec, grid).values)
        diag.append(np.diag(sigma_hat(ds, spec, grid).entries))
    est, diag = np.array(est), np.array(diag)
    mc_var = est.var(axis=0, ddof=1)
    # standard error of the sample variance under normality, plus that of the mean of diag
    se = np.sqrt(2 * mc_var**2 / (len(est) - 1) + diag.var(axis=0, ddof=1) / len(diag))
    assert np.all(np.abs(diag.mean(axis=0) - mc_var) <= 3 * se)


# PSD projection ------------------------------------------------------------


def _perturbed(rng, d, n=30, strength=0.3):
    """A realistic raw covariance (positive diagonal) minus a rank-one term."""
    spec = KernelSpec("epanechnikov", 4, 0.6, DOMAIN)
    grid = make_grid(DOMAIN, d)
    while True:
        m = sigma_hat(random_dataset(rng, n), spec, grid).entries
        if np.min(np.diag(m)) > 0:
            break
    v = rng.normal(size=d)
    v /= np.linalg.norm(v)
    m = m - strength * np.min(np.diag(m)) * np.outer(v, v)
    m = (m + m.T) / 2
    return CovMatrix(grid, m), lipschitz_constants(spec), n, spec.bandwidth


def test_feasible_input_returned_unchanged(rng):
    raw, consts, n, h = _perturbed(rng, 8, strength=0.0)
    m = project_psd(raw.entries)
    feasible = CovMatrix(raw.grid, m)
    out = psd_project(feasible, LipschitzConstants(1e6, 1e6), n, h)
    assert out.method == "raw" and out.objective <= 1e-12
    assert np.array_equal(out.entries, m)


@pytest.mark.parametrize("d", [3, 6, 12])
def test_projection_contract(rng, d):
    raw, consts, n, h = _perturbed(rng, d)
    out = psd_project(raw, consts, n, h)
    bound = lipschitz_bound(consts, n, h)
    assert np.linalg.eigvalsh(out.entries)[0] >= -1e-8
    assert np.array_equal(out.entries, out.entries.T)
    assert lipschitz_ok(out.entries, raw.grid, bound)
    for value in out.candidates.values():
        assert out.objective <= value + 1.0 / n
    assert out.objective == pytest.approx(oracles.sup_objective(out.entries, raw.entries), rel=1e-9)
    x = rng.normal(size=(50, d))
    quad = np.einsum("ij,jk,ik->i", x, out.entries, x)
    assert np.all(quad >= -1e-8 * np.sum(x**2, axis=1))


def test_objective_below_perturbation_scale(rng):
    # raw = PSD - small rank one; the PSD original is feasible when the bound is loose
    d = 6
    a = rng.normal(size=(d, d))
    base = a @ a.T / d + np.eye(d)
    v = rng.normal(size=d)
    v /= np.linalg.norm(v)
    raw = base - 1.5 * np.linalg.eigvalsh(base)[0] * np.outer(v, v)
    grid = make_grid(DOMAIN, d)
    out = psd_project(CovMatrix(grid, raw), LipschitzConstants(1e6, 1e6), 50, 0.5)
    assert np.linalg.eigvalsh(out.entries)[0] >= -1e-8
    assert out.objective <= oracles.sup_objective(base, raw) + 1e-12


def test_idempotent(rng):
    raw, consts, n, h = _perturbed(rng, 7)
    out = psd_project(raw, consts, n, h)
    again = psd_project(CovMatrix(raw.grid, out.entries), consts, n, h)
    assert np.max(np.abs(again.entries - out.entries)) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_two_by_two_matches_search(seed):
    r = np.random.default_rng(seed)
    grid = np.array([0.0, 0.5])
    a, c = r.uniform(0.5, 2.0, 2)
    b = np.sqrt(a * c) * r.uniform(1.05, 1.6)
    raw = np.array([[a, b], [b, c]])
    bound = r.uniform(0.5, 4.0)
    consts = LipschitzConstants(C_L=1.0, C_k=bound / 4.0)
    out = psd_project(CovMatrix(grid, raw), consts, 1, 1.0)
    best = oracles.psd_2x2_search(raw, bound, 0.5)
    assert out.objective <= best + 1e-4
    assert out.objective >= best - 1e-4


@pytest.mark.parametrize("d", [3, 8, 15])
def test_near_optimal_against_sdp_solver(rng, d):
    pytest.importorskip("cvxpy")
    from dyadkde.covariance import _Problem, _level_lower_bound

    for _ in range(3):
        raw, consts, n, h = _perturbed(rng, d)
        out = psd_project(raw, consts, n, h)
        bound = lipschitz_bound(consts, n, h)
        best = oracles.sdp_optimum(raw.entries, raw.grid, bound)
        # the approximate-optimality tolerance is 1/n
        assert best - 1e-7 <= out.objective <= best + 1.0 / n
        assert _level_lower_bound(_Problem(raw.entries, raw.grid, bound)) <= best + 1e-7


def test_negative_denominator():
    raw = CovMatrix(np.array([0.0, 1.0]), np.array([[-1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(NormalizationError):
        psd_project(raw, LipschitzConstants(1.0, 1.0), 10, 0.5)


def test_zero_variance_pairs_excluded():
    raw = CovMatrix(np.array([0.0, 0.5, 1.0]), np.diag([0.0, 1.0, 1.0]))
    out = psd_project(raw, LipschitzConstants(10.0, 10.0), 10, 0.5)
    assert out.excluded_pairs == 1
    assert out.objective == 0.0


def test_ridge_is_opt_in(rng):
    raw, consts, n, h = _perturbed(rng, 5, strength=0.0)
    m = project_psd(raw.entries)
    plain = psd_project(CovMatrix(raw.grid, m), LipschitzConstants(1e6, 1e6), n, h)
    ridged = psd_project(CovMatrix(raw.grid, m), LipschitzConstants(1e6, 1e6), n, h, ridge=True)
    assert np.array_equal(plain.entries, m)
    shift = 1e-12 * np.trace(m) / 5
    np.testing.assert_allclose(np.diag(ridged.entries) - np.diag(m), shift, rtol=0, atol=1e-18)


def test_asymmetric_input_rejected():
    with pytest.raises(ValueError):
        psd_project(CovMatrix(np.array([0.0, 1.0]), np.array([[1.0, 0.1], [0.2, 1.0]])), LipschitzConstants(1, 1), 5, 1)
