"""Uniform confidence bands, pointwise intervals and the two-sample test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .bandwidth import rot_bandwidth
from .covariance import CovMatrix, PSDCovMatrix, psd_project, sigma_hat
from .data import DyadicDataset, DyadicInputError
from .estimator import DensityEstimate, fhat, make_grid, pair_kernels
from .kernels import KernelSpec, lipschitz_constants

# Diagonal entries at or below this fraction of the largest one are treated
# as zero-variance points.
ZERO_VARIANCE_RTOL = 1e-12
DRAW_CHUNK = 20_000


class DegenerateCovarianceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class UniformBand:
    grid: np.ndarray
    center: np.ndarray
    halfwidth: np.ndarray
    q_hat: float
    alpha: float
    B: int
    se: np.ndarray
    zero_variance: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.halfwidth

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.halfwidth

    def covers(self, truth) -> bool:
        truth = np.asarray(truth, dtype=float)
        return bool(np.all((self.lower <= truth) & (truth <= self.upper)))


@dataclass(frozen=True)
class RBCConfig:
    domain: tuple[float, float]
    p: int = 2
    p_prime: int = 4
    alpha: float = 0.05
    B: int = 10_000
    d: int = 100
    family: str = "epanechnikov"
    ridge: bool = False

    def __post_init__(self):
        if self.p % 2 or self.p_prime % 2 or self.p < 2:
            raise ValueError("kernel orders must be even and at least 2")
        if not self.p < self.p_prime:
            raise ValueError(f"need p < p_prime, got p={self.p}, p_prime={self.p_prime}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.B < 100:
            raise ValueError("use at least 100 Gaussian draws")
        a, b = self.domain
        object.__setattr__(self, "domain", (float(a), float(b)))


@dataclass(frozen=True)
class TwoSampleResult:
    tau: float
    p_index: float
    critical_value: float
    reject: bool
    alpha: float
    meta: dict = field(default_factory=dict)


def _rng(seed, *stream) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *stream]))


def _variance_mask(diag: np.ndarray) -> np.ndarray:
    top = float(np.max(diag)) if diag.size else 0.0
    if not top > 0:
        raise DegenerateCovarianceError("every grid point has zero variance")
    return diag > ZERO_VARIANCE_RTOL * top


def _sqrt_factor(m: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    if vals[0] < -1e-6 * max(vals[-1], 1.0):
        raise ArithmeticError(f"{what} is not positive semi-definite (min eigenvalue {vals[0]:.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def correlation_factor(psd: PSDCovMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Square-root factor of the correlation matrix on the non-degenerate points."""
    m = np.asarray(psd.entries)
    keep = _variance_mask(np.diag(m))
    sub = m[np.ix_(keep, keep)]
    sd = np.sqrt(np.diag(sub))
    corr = sub / np.outer(sd, sd)
    return _sqrt_factor((corr + corr.T) / 2.0, "correlation matrix"), keep


def sup_draws(psd: PSDCovMatrix, B: int, seed) -> np.ndarray:
    """B draws of max_w |Z(w)| for the Studentised Gaussian process."""
    root, _ = correlation_factor(psd)
    rng = _rng(seed)
    out = np.empty(B)
    dim = root.shape[1]
    for start in range(0, B, DRAW_CHUNK):
        stop = min(start + DRAW_CHUNK, B)
        g = rng.standard_normal((stop - start, dim))
        out[start:stop] = np.max(np.abs(g @ root.T), axis=1)
    return out


def order_quantile(draws: np.ndarray, alpha: float) -> float:
    """Smallest q with #{draws <= q} >= B (1 - alpha)."""
    B = draws.size
    k = max(1, math.ceil(B * (1.0 - alpha) - 1e-9))
    return float(np.partition(draws, k - 1)[k - 1])


def gaussian_quantile(psd: PSDCovMatrix, alpha: float, B: int, seed) -> float:
    if B < 100:
        raise ValueError("use at least 100 Gaussian draws")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return order_quantile(sup_draws(psd, B, seed), alpha)


def _halfwidths(center: DensityEstimate, psd: PSDCovMatrix, multiplier: float):
    if not np.array_equal(np.asarray(center.grid), np.asarray(psd.grid)):
        raise DyadicInputError("estimate and covariance live on different grids")
    diag = np.clip(np.diag(psd.entries), 0.0, None)
    zero = ~_variance_mask(diag) if np.max(diag) > 0 else np.ones(diag.shape, bool)
    se = np.where(zero, 0.0, np.sqrt(diag))
    return se, multiplier * se, zero


def uniform_band(
    center: DensityEstimate, psd: PSDCovMatrix, q_hat: float, alpha: float = float("nan"), B: int = 0
) -> UniformBand:
    se, hw, zero = _halfwidths(center, psd, q_hat)
    return UniformBand(center.grid, center.values, hw, q_hat, alpha, B, se, zero, dict(center.meta))


def pointwise_intervals(center: DensityEstimate, psd: PSDCovMatrix, alpha: float) -> UniformBand:
    z = float(norm.ppf(1.0 - alpha / 2.0))
    se, hw, zero = _halfwidths(center, psd, z)
    return UniformBand(center.grid, center.values, hw, z, alpha, 0, se, zero, dict(center.meta))


@dataclass(frozen=True)
class Fit:
    """Everything computed for one kernel on one dataset."""

    spec: KernelSpec
    estimate: DensityEstimate
    raw: CovMatrix
    psd: PSDCovMatrix


def fit(dataset: DyadicDataset, spec: KernelSpec, grid, ridge: bool = False, **psd_kw) -> Fit:
    k = pair_kernels(dataset, spec, grid)
    est = fhat(dataset, spec, grid, kernels=k)
    raw = sigma_hat(dataset, spec, grid, kernels=k)
    psd = psd_project(raw, lipschitz_constants(spec), dataset.n, spec.bandwidth, ridge=ridge, **psd_kw)
    return Fit(spec, est, raw, psd)


def rbc_band(dataset: DyadicDataset, config: RBCConfig, seed) -> UniformBand:
    """Robust bias-corrected uniform band.

    Bandwidth from the rule of thumb (order-p constant); estimate, covariance,
    PSD projection and quantile all use the order-p' kernel at that bandwidth.
    """
    h = rot_bandwidth(dataset, config.family)
    spec = KernelSpec(config.family, config.p_prime, h.h, config.domain)
    spec.check_bandwidth(dataset.n)
    grid = make_grid(config.domain, config.d)
    res = fit(dataset, spec, grid, ridge=config.ridge)
    q = gaussian_quantile(res.psd, config.alpha, config.B, seed)
    band = uniform_band(res.estimate, res.psd, q, config.alpha, config.B)
    band.meta.update(
        h_rot=h.h,
        rot_constant=h.constant,
        p=config.p,
        p_prime=config.p_prime,
        q_hat=q,
        psd_objective=res.psd.objective,
        psd_method=res.psd.method,
        seed=int(seed),
    )
    return band


def _functional(diff: np.ndarray, p_index: float, dw: float) -> np.ndarray:
    if math.isinf(p_index):
        return np.max(np.abs(diff), axis=-1)
    return np.sqrt(np.sum(diff**2, axis=-1) * dw)


def two_sample_test(
    data0: DyadicDataset,
    data1: DyadicDataset,
    config: RBCConfig,
    p_index: float = math.inf,
    seed: int = 0,
    domain1: tuple[float, float] | None = None,
) -> TwoSampleResult:
    """Test equality of two dyadic densities on a shared domain.

    Each sample gets its own rule-of-thumb bandwidth and order-p' estimate.
    The critical value comes from B draws of the same functional applied to
    the difference of independent Gaussian vectors with the two PSD
    covariance estimates.
    """
    if p_index not in (2, math.inf):
        raise ValueError("p_index must be 2 or inf")
    if domain1 is not None and tuple(map(float, domain1)) != config.domain:
        raise DyadicInputError(f"domains differ: {config.domain} vs {tuple(domain1)}")
    grid = make_grid(config.domain, config.d)
    dw = float(grid[1] - grid[0])
    fits = []
    for data in (data0, data1):
        h = rot_bandwidth(data, config.family).h
        spec = KernelSpec(config.family, config.p_prime, h, config.domain)
        fits.append(fit(data, spec, grid, ridge=config.ridge))
    diff = fits[1].estimate.values - fits[0].estimate.values
    tau = float(_functional(diff, p_index, dw))

    roots = [_sqrt_factor(f.psd.entries, "covariance") for f in fits]
    rngs = [_rng(seed, r) for r in (0, 1)]
    stats = np.empty(config.B)
    for start in range(0, config.B, DRAW_CHUNK):
        stop = min(start + DRAW_CHUNK, config.B)
        z = [rng.standard_normal((stop - start, grid.size)) @ root.T for rng, root in zip(rngs, roots)]
        stats[start:stop] = _functional(z[0] - z[1], p_index, dw)
    crit = order_quantile(stats, config.alpha)
    return TwoSampleResult(
        tau=tau,
        p_index=p_index,
        critical_value=crit,
        reject=bool(tau >= crit),
        alpha=config.alpha,
        meta={"h0": fits[0].spec.bandwidth, "h1": fits[1].spec.bandwidth, "bandwidths": "per-sample ROT"},
    )
