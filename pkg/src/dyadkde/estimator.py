"""Dyadic kernel density estimator on an evaluation grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DegenerateInputError, DyadicDataset, DyadicInputError
from .kernels import KernelSpec, coefficient_table, kernel_matrix

# Pair rows per block when forming kernel matrices; bounds peak memory.
CHUNK_PAIRS = 1 << 17


def make_grid(domain, d: int = 100) -> np.ndarray:
    """``d`` equally spaced points covering the domain, endpoints included.

    A single point is placed at the midpoint.
    """
    if d < 1:
        raise ValueError("grid needs at least one point")
    a, b = domain
    if d == 1:
        return np.array([0.5 * (float(a) + float(b))])
    return np.linspace(float(a), float(b), int(d))


def check_grid(grid, domain) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    a, b = domain
    if grid[0] < a or grid[-1] > b:
        raise ValueError(f"grid leaves the domain [{a}, {b}]")
    return grid


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def integral(self) -> float:
        """Trapezoid integral over the grid; should sit near 1 for sane inputs."""
        return float(np.trapezoid(self.values, self.grid))


def pair_kernels(dataset: DyadicDataset, spec: KernelSpec, grid) -> np.ndarray:
    """k_h(W_ij, w_m) for every pair slot, shape (n_pairs, d); missing rows are 0."""
    grid = np.asarray(grid, dtype=float)
    table = coefficient_table(spec, grid)
    values = dataset.values
    out = np.empty((values.size, grid.size))
    for start in range(0, values.size, CHUNK_PAIRS):
        stop = min(start + CHUNK_PAIRS, values.size)
        out[start:stop] = kernel_matrix(spec, values[start:stop], grid, table)
    out[~dataset.present] = 0.0
    return out


def _meta(dataset: DyadicDataset, spec: KernelSpec) -> dict:
    return {
        "family": spec.family,
        "order": spec.order,
        "bandwidth": spec.bandwidth,
        "domain": list(spec.domain),
        "n": dataset.n,
        "n_present": dataset.n_present,
        "mixture_weight": dataset.mixture_weight,
        "normalization": "present_pairs",
    }


def fhat(dataset: DyadicDataset, spec: KernelSpec, grid, kernels=None) -> DensityEstimate:
    """Average of k_h(W_ij, w) over present pairs.

    With every pair present this is the usual 2 / (n (n - 1)) double sum.
    """
    grid = check_grid(grid, spec.domain)
    if dataset.n_present < 1:
        raise DegenerateInputError("no present pairs to estimate from")
    k = pair_kernels(dataset, spec, grid) if kernels is None else kernels
    values = k.sum(axis=0) / dataset.n_present
    return DensityEstimate(grid, values, _meta(dataset, spec))


def weighted_fhat(
    dataset: DyadicDataset, node_weights, spec: KernelSpec, grid, kernels=None
) -> DensityEstimate:
    """Average over present pairs of weight_i * weight_j * k_h(W_ij, w)."""
    grid = check_grid(grid, spec.domain)
    weights = np.asarray(node_weights, dtype=float)
    if weights.shape != (dataset.n,):
        raise DyadicInputError(f"need {dataset.n} node weights, got {weights.shape}")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise DyadicInputError("node weights must be non-negative and finite")
    if dataset.n_present < 1:
        raise DegenerateInputError("no present pairs to estimate from")
    k = pair_kernels(dataset, spec, grid) if kernels is None else kernels
    i, j = dataset.pairs()
    pair_w = weights[i] * weights[j]
    values = (pair_w[:, None] * k).sum(axis=0) / dataset.n_present
    return DensityEstimate(grid, values, _meta(dataset, spec))
