"""Counterfactual dyadic densities under a discrete covariate shift.

Population 1's network is reweighted node by node with
psi(x) = p0(x) / p1(x), the ratio of the two covariate mass functions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .bandwidth import rot_bandwidth
from .covariance import CovMatrix, _symmetrize, psd_project
from .data import DegenerateInputError, DyadicDataset, DyadicInputError
from .estimator import DensityEstimate, check_grid, make_grid, pair_kernels, weighted_fhat
from .inference import RBCConfig, UniformBand, gaussian_quantile, uniform_band
from .kernels import KernelSpec, lipschitz_constants


class SupportError(DyadicInputError):
    """A covariate level present in population 0 never occurs in population 1."""


@dataclass(frozen=True)
class CovariateSample:
    """Per-node covariate levels for both populations, as indices into ``levels``."""

    levels: tuple
    x0: np.ndarray
    x1: np.ndarray

    @classmethod
    def from_values(cls, x0, x1, levels=None) -> "CovariateSample":
        x0, x1 = list(x0), list(x1)
        if len(x0) != len(x1):
            raise DyadicInputError("both populations need one covariate per node")
        if levels is None:
            levels = tuple(sorted(set(x0) | set(x1), key=lambda v: (str(type(v)), v)))
        lookup = {lev: k for k, lev in enumerate(levels)}
        try:
            i0 = np.array([lookup[v] for v in x0], dtype=int)
            i1 = np.array([lookup[v] for v in x1], dtype=int)
        except KeyError as exc:
            raise DyadicInputError(f"covariate level {exc.args[0]!r} not among {levels}") from exc
        return cls(tuple(levels), i0, i1)

    @property
    def n(self) -> int:
        return self.x0.size


@dataclass(frozen=True)
class PsiWeights:
    levels: tuple
    ratio: np.ndarray
    node_weights: np.ndarray


def pmf_hat(assignments, n_levels: int) -> np.ndarray:
    """Empirical frequencies of level indices 0..n_levels-1."""
    assignments = np.asarray(assignments, dtype=int)
    if assignments.size < 1:
        raise DegenerateInputError("no nodes")
    return np.bincount(assignments, minlength=n_levels) / assignments.size


def psi_hat(p0, p1, levels=None, x1=None) -> PsiWeights:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    levels = tuple(range(p0.size)) if levels is None else tuple(levels)
    bad = (p1 == 0) & (p0 > 0)
    if bad.any():
        names = ", ".join(repr(levels[k]) for k in np.flatnonzero(bad))
        raise SupportError(f"level(s) {names} occur in population 0 but not in population 1")
    ratio = np.divide(p0, p1, out=np.zeros_like(p0), where=p1 > 0)
    nodes = ratio[np.asarray(x1, dtype=int)] if x1 is not None else np.empty(0)
    return PsiWeights(levels, ratio, nodes)


def kappa_hat(x0_i: int, x1_i: int, x: int, p0, p1) -> float:
    """Plug-in influence function of psi-hat(x) for node i."""
    if not p1[x] > 0:
        raise SupportError(f"level {x!r} has zero frequency in population 1")
    psi = p0[x] / p1[x]
    return ((x0_i == x) - p0[x]) / p1[x] - psi * ((x1_i == x) - p1[x]) / p1[x]


def kappa_table(sample: CovariateSample, p0, p1) -> np.ndarray:
    """kappa-hat(X_i^0, X_i^1, x) for every node i (rows) and level x (columns)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    L = len(sample.levels)
    if np.any(p1 == 0):
        zero = [sample.levels[k] for k in np.flatnonzero(p1 == 0)]
        raise SupportError(f"level(s) {zero} have zero frequency in population 1")
    ind0 = (sample.x0[:, None] == np.arange(L)).astype(float)
    ind1 = (sample.x1[:, None] == np.arange(L)).astype(float)
    psi = p0 / p1
    return (ind0 - p0) / p1 - psi * (ind1 - p1) / p1


def fit_psi(sample: CovariateSample):
    """(p0, p1, psi, kappa) for a covariate sample."""
    L = len(sample.levels)
    p0 = pmf_hat(sample.x0, L)
    p1 = pmf_hat(sample.x1, L)
    psi = psi_hat(p0, p1, sample.levels, sample.x1)
    # Levels absent from both populations carry no information; drop them
    # from the influence table so p1 > 0 holds there.
    used = (p0 > 0) | (p1 > 0)
    if not used.all():
        remap = -np.ones(L, dtype=int)
        remap[used] = np.arange(used.sum())
        sub = CovariateSample(
            tuple(l for l, u in zip(sample.levels, used) if u), remap[sample.x0], remap[sample.x1]
        )
        kappa = kappa_table(sub, p0[used], p1[used])
        full = np.zeros((sample.n, L))
        full[:, used] = kappa
        kappa = full
    else:
        kappa = kappa_table(sample, p0, p1)
    return p0, p1, psi, kappa


def _check_sample(data1: DyadicDataset, sample: CovariateSample) -> None:
    if sample.n != data1.n:
        raise DyadicInputError(f"{sample.n} covariate rows for a network of {data1.n} nodes")


def cf_estimate(data1: DyadicDataset, psi: PsiWeights, spec: KernelSpec, grid, kernels=None) -> DensityEstimate:
    est = weighted_fhat(data1, psi.node_weights, spec, grid, kernels=kernels)
    est.meta["counterfactual"] = True
    return est


def cf_covariance(
    data1: DyadicDataset,
    sample: CovariateSample,
    psi: PsiWeights,
    kappa: np.ndarray,
    spec: KernelSpec,
    grid,
    kernels=None,
) -> CovMatrix:
    """Plug-in covariance of the counterfactual estimator, including the
    first-stage estimation of psi through its influence function."""
    _check_sample(data1, sample)
    n = data1.n
    if n < 3:
        raise DegenerateInputError("covariance estimation needs n >= 3")
    grid = check_grid(grid, spec.domain)
    k = pair_kernels(data1, spec, grid) if kernels is None else kernels
    w = np.asarray(psi.node_weights, dtype=float)
    i, j = data1.pairs()
    cols = np.arange(i.size)
    # row i picks up k_ij psi_j, row j picks up k_ij psi_i
    weighted_inc = sparse.csr_matrix(
        (np.concatenate([w[j], w[i]]), (np.concatenate([i, j]), np.concatenate([cols, cols]))),
        shape=(n, i.size),
    )
    s = np.asarray(weighted_inc @ k) / (n - 1)
    kap = kappa[:, sample.x1].copy()
    np.fill_diagonal(kap, 0.0)
    s_tilde = kap @ s / (n - 1)
    t = w[:, None] * s + s_tilde
    pair_w2 = (w[i] * w[j]) ** 2
    f_full = ((w[i] * w[j])[:, None] * k).sum(axis=0) * (2.0 / (n * (n - 1)))
    entries = (
        (4.0 / n**2) * (t.T @ t)
        - (4.0 / (n**3 * (n - 1))) * (k.T @ (pair_w2[:, None] * k))
        - (4.0 / n) * np.outer(f_full, f_full)
    )
    rho = data1.mixture_weight
    return CovMatrix(grid, _symmetrize(entries) / rho**2, {"n": n, "mixture_weight": rho})


def cf_band(
    data1: DyadicDataset, sample: CovariateSample, config: RBCConfig, seed
) -> UniformBand:
    """Uniform band for the counterfactual density, robust bias-corrected."""
    _check_sample(data1, sample)
    p0, p1, psi, kappa = fit_psi(sample)
    h = rot_bandwidth(data1, config.family)
    spec = KernelSpec(config.family, config.p_prime, h.h, config.domain)
    grid = make_grid(config.domain, config.d)
    k = pair_kernels(data1, spec, grid)
    est = cf_estimate(data1, psi, spec, grid, kernels=k)
    raw = cf_covariance(data1, sample, psi, kappa, spec, grid, kernels=k)
    psd = psd_project(raw, lipschitz_constants(spec), data1.n, spec.bandwidth, ridge=config.ridge)
    q = gaussian_quantile(psd, config.alpha, config.B, seed)
    band = uniform_band(est, psd, q, config.alpha, config.B)
    band.meta.update(
        h_rot=h.h,
        q_hat=q,
        psd_objective=psd.objective,
        psd_method=psd.method,
        psi=dict(zip(map(str, psi.levels), psi.ratio.tolist())),
        seed=int(seed),
    )
    return band


def read_covariate_csv(path, dataset: DyadicDataset) -> CovariateSample:
    """Read ``node,x0,x1`` and align rows with the dataset's node labels."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in reader.fieldnames or []]
        if header[:3] != ["node", "x0", "x1"]:
            raise DyadicInputError(f"{path}: expected header node,x0,x1, got {header}")
        rows = {}
        for row in reader:
            node = row["node"].strip()
            if node in rows:
                raise DyadicInputError(f"{path}: node {node!r} listed twice")
            rows[node] = (row["x0"].strip(), row["x1"].strip())
    missing = [lab for lab in dataset.labels if str(lab) not in rows]
    if missing:
        raise DyadicInputError(f"{path}: no covariates for node(s) {missing[:5]}")
    x0 = [rows[str(lab)][0] for lab in dataset.labels]
    x1 = [rows[str(lab)][1] for lab in dataset.labels]
    return CovariateSample.from_values(x0, x1)
