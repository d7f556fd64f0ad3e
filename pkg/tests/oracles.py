"""Slow, direct reference computations used to check the library.

Everything here is written from the defining formulas with explicit loops
or generic numerical routines, sharing no code paths with the package
beyond the dataset container.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate
from scipy.stats import norm


def base_kernel(family, u):
    if abs(u) > 1:
        return 0.0
    if family == "epanechnikov":
        return 0.75 * (1 - u * u)
    if family == "triangular":
        return 1 - abs(u)
    return 0.5


def quad_moment(family, k, lo, hi):
    pts = [0.0] if lo < 0 < hi else None
    val, _ = integrate.quad(lambda u: u**k * base_kernel(family, u), lo, hi, points=pts, epsabs=1e-14, epsrel=1e-13)
    return val


def boundary_coefficients(family, order, lo, hi):
    """Polynomial coefficients from moments computed by adaptive quadrature."""
    mom = [quad_moment(family, k, lo, hi) for k in range(2 * order - 1)]
    M = np.array([[mom[r + j] for j in range(order)] for r in range(order)])
    e1 = np.zeros(order)
    e1[0] = 1.0
    return np.linalg.solve(M, e1)


def kernel_value(family, order, h, domain, s, w):
    a, b = domain
    lo, hi = max(-1.0, (a - w) / h), min(1.0, (b - w) / h)
    u = (s - w) / h
    if u < lo or u > hi:
        return 0.0
    c = boundary_coefficients(family, order, lo, hi)
    return base_kernel(family, u) * sum(cj * u**j for j, cj in enumerate(c)) / h


def kernel_array(dataset, spec, grid):
    """K[i, j, m] = k_h(W_ij, w_m), symmetric in (i, j); missing pairs are 0."""
    n = dataset.n
    K = np.zeros((n, n, len(grid)))
    coefs = {}
    for m, w in enumerate(grid):
        a, b = spec.domain
        h = spec.bandwidth
        lo, hi = max(-1.0, (a - w) / h), min(1.0, (b - w) / h)
        coefs[m] = (lo, hi, boundary_coefficients(spec.family, spec.order, lo, hi))
    slot = 0
    for i in range(n):
        for j in range(i + 1, n):
            if dataset.present[slot]:
                s = dataset.values[slot]
                for m, w in enumerate(grid):
                    lo, hi, c = coefs[m]
                    u = (s - w) / spec.bandwidth
                    if lo <= u <= hi:
                        v = base_kernel(spec.family, u) * sum(cj * u**p for p, cj in enumerate(c)) / spec.bandwidth
                        K[i, j, m] = K[j, i, m] = v
            slot += 1
    return K


def fhat_double_sum(K, present_count):
    n = K.shape[0]
    total = np.zeros(K.shape[2])
    for i in range(n):
        for j in range(i + 1, n):
            total += K[i, j]
    return total / present_count


def weighted_double_sum(K, weights, present_count):
    n = K.shape[0]
    total = np.zeros(K.shape[2])
    for i in range(n):
        for j in range(i + 1, n):
            total += weights[i] * weights[j] * K[i, j]
    return total / present_count


def sigma_triple_sum(K):
    """Covariance estimator in the pair-plus-triple representation."""
    n = K.shape[0]
    d = K.shape[2]
    c = 1.0 / (n**2 * (n - 1) ** 2)
    pair = np.zeros((d, d))
    for i, j in itertools.combinations(range(n), 2):
        pair += np.outer(K[i, j], K[i, j])
    triple = np.zeros((d, d))
    for i, j, r in itertools.combinations(range(n), 3):
        a, b, e = K[i, j], K[i, r], K[j, r]
        triple += (
            np.outer(a, b) + np.outer(a, e) + np.outer(b, a) + np.outer(b, e) + np.outer(e, a) + np.outer(e, b)
        ) / 6.0
    f = fhat_double_sum(K, n * (n - 1) / 2)
    return 4 * c * pair + 24 * c * triple - (4 * n - 6) / (n * (n - 1)) * np.outer(f, f)


def cf_covariance_loops(K, psi_nodes, kappa_node_level, x1):
    """Counterfactual covariance written out term by term with loops."""
    n = K.shape[0]
    d = K.shape[2]
    S = np.zeros((n, d))
    for i in range(n):
        for j in range(n):
            if j != i:
                S[i] += K[i, j] * psi_nodes[j]
    S /= n - 1
    St = np.zeros((n, d))
    for i in range(n):
        for j in range(n):
            if j != i:
                St[i] += kappa_node_level[i][x1[j]] * S[j]
    St /= n - 1
    first = np.zeros((d, d))
    for i in range(n):
        t = psi_nodes[i] * S[i] + St[i]
        first += np.outer(t, t)
    second = np.zeros((d, d))
    f = np.zeros(d)
    for i, j in itertools.combinations(range(n), 2):
        ww = psi_nodes[i] * psi_nodes[j]
        second += np.outer(K[i, j], K[i, j]) * ww**2
        f += ww * K[i, j]
    f *= 2.0 / (n * (n - 1))
    return 4 / n**2 * first - 4 / (n**3 * (n - 1)) * second - 4 / n * np.outer(f, f)


def independence_quantile(d, alpha):
    """Exact (1 - alpha) quantile of max |Z_m| over d independent normals."""
    return float(norm.ppf((1 + (1 - alpha) ** (1.0 / d)) / 2))


def sup_objective(M, raw):
    diag = np.diag(raw)
    den = np.sqrt(diag[:, None] + diag[None, :])
    return float(np.max(np.abs(M - raw) / den))


def psd_2x2_search(raw, L, dw, levels=6, points=41):
    """Minimum of the sup objective over 2x2 PSD, Lipschitz matrices by zooming grid search.

    M = [[a, b], [b, c]] with a, c >= 0, b^2 <= a c, |b - a| <= L dw, |c - b| <= L dw.
    """
    diag = np.diag(raw)
    den = np.sqrt(diag[:, None] + diag[None, :])
    scale = float(np.max(np.abs(raw))) * 2 + 1e-300
    centre = np.array([raw[0, 0], raw[0, 1], raw[1, 1]])
    half = np.array([scale, scale, scale])
    best, best_x = math.inf, None
    for _ in range(levels):
        axes = [np.linspace(c - hw, c + hw, points) for c, hw in zip(centre, half)]
        A, Bm, C = np.meshgrid(*axes, indexing="ij")
        ok = (A >= 0) & (C >= 0) & (Bm**2 <= A * C) & (np.abs(Bm - A) <= L * dw) & (np.abs(C - Bm) <= L * dw)
        obj = np.maximum.reduce([
            np.abs(A - raw[0, 0]) / den[0, 0],
            np.abs(Bm - raw[0, 1]) / den[0, 1],
            np.abs(C - raw[1, 1]) / den[1, 1],
        ])
        obj = np.where(ok, obj, np.inf)
        k = np.unravel_index(np.argmin(obj), obj.shape)
        if obj[k] < best:
            best, best_x = float(obj[k]), np.array([A[k], Bm[k], C[k]])
        if best_x is not None:
            centre = best_x
        half = half * 4.0 / (points - 1)
    return best


def triangles(adj):
    n = adj.shape[0]
    return sum(
        1 for i, j, k in itertools.combinations(range(n), 3) if adj[i, j] and adj[j, k] and adj[i, k]
    )


def connected_triples(adj):
    deg = adj.sum(axis=1)
    return float(np.sum(deg * (deg - 1) / 2))


def sdp_optimum(raw, grid, bound):
    """Exact optimum of the finite-grid fitting problem by an interior-point SDP solver."""
    import cvxpy as cp

    d = raw.shape[0]
    diag = np.diag(raw)
    den = np.sqrt(diag[:, None] + diag[None, :])
    M = cp.Variable((d, d), symmetric=True)
    t = cp.Variable()
    cons = [M >> 0, cp.abs(M - raw) <= t * den]
    if d > 1:
        steps = bound * np.tile(np.diff(grid), (d, 1))
        cons.append(cp.abs(M[:, 1:] - M[:, :-1]) <= steps)
    cp.Problem(cp.Minimize(t), cons).solve(solver="CLARABEL")
    return float(t.value)
