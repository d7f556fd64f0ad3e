"""Boundary bias-corrected kernels of even order on a compact interval.

At a centre ``w`` the kernel is the base kernel multiplied by a polynomial
of degree ``p - 1`` in ``u = (s - w) / h``, with coefficients chosen so the
moments over the truncated support ``[w - h, w + h]`` intersected with the
domain satisfy the order-``p`` ladder (1, 0, ..., 0). All moment integrals
are exact polynomial integrals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P

FAMILIES = ("epanechnikov", "triangular", "uniform")

# Piecewise-polynomial representation of each base kernel on [-1, 1]:
# (left, right, ascending coefficients).
_PIECES = {
    "epanechnikov": ((-1.0, 1.0, (0.75, 0.0, -0.75)),),
    "triangular": ((-1.0, 0.0, (1.0, 1.0)), (0.0, 1.0, (1.0, -1.0))),
    "uniform": ((-1.0, 1.0, (0.5,)),),
}


class KernelConstructionError(ArithmeticError):
    pass


def _check_family(family: str) -> str:
    family = family.lower()
    if family not in FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}; choose from {FAMILIES}")
    return family


def base_kernel(family: str, u):
    """Base kernel K(u), zero outside [-1, 1]. Works on scalars and arrays."""
    family = _check_family(family)
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= 1.0
    if family == "epanechnikov":
        out = 0.75 * (1.0 - u * u)
    elif family == "triangular":
        out = 1.0 - np.abs(u)
    else:
        out = np.full(u.shape, 0.5)
    out = np.where(inside, out, 0.0)
    return float(out) if out.ndim == 0 else out


def base_moment(family: str, k: int, lo: float = -1.0, hi: float = 1.0) -> float:
    """Exact value of the integral of u**k K(u) over [lo, hi]."""
    total = 0.0
    for left, right, coef in _PIECES[_check_family(family)]:
        a, b = max(lo, left), min(hi, right)
        if b <= a:
            continue
        anti = P.polyint(np.concatenate([np.zeros(k), coef]))
        total += P.polyval(b, anti) - P.polyval(a, anti)
    return float(total)


@dataclass(frozen=True)
class KernelSpec:
    family: str
    order: int
    bandwidth: float
    domain: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "family", _check_family(self.family))
        if self.order < 2 or self.order % 2:
            raise ValueError(f"kernel order must be an even integer >= 2, got {self.order}")
        h = float(self.bandwidth)
        if not (h > 0 and math.isfinite(h)):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth}")
        a, b = map(float, self.domain)
        if not b > a:
            raise ValueError(f"domain must satisfy b > a, got {self.domain}")
        object.__setattr__(self, "bandwidth", h)
        object.__setattr__(self, "domain", (a, b))

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    def with_order(self, order: int) -> "KernelSpec":
        return KernelSpec(self.family, order, self.bandwidth, self.domain)

    def check_bandwidth(self, n: int) -> None:
        """Warn when h log n is not small, the regime the method assumes."""
        if n > 1 and self.bandwidth * math.log(n) >= 1.0:
            warnings.warn(
                f"h*log(n) = {self.bandwidth * math.log(n):.3g} is not small",
                RuntimeWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class BoundaryKernel:
    center: float
    lo: float
    hi: float
    coefficients: tuple[float, ...]


@dataclass(frozen=True)
class LipschitzConstants:
    C_L: float
    C_k: float


def _truncation(spec: KernelSpec, w):
    a, b = spec.domain
    h = spec.bandwidth
    lo = np.maximum(-1.0, (a - w) / h)
    hi = np.minimum(1.0, (b - w) / h)
    return lo, hi


@lru_cache(maxsize=8192)
def _coefficients(family: str, order: int, lo: float, hi: float) -> tuple[float, ...]:
    if not hi > lo:
        raise KernelConstructionError(f"empty truncated support [{lo}, {hi}]")
    mom = [base_moment(family, k, lo, hi) for k in range(2 * order - 1)]
    M = np.array([[mom[r + j] for j in range(order)] for r in range(order)])
    rhs = np.zeros(order)
    rhs[0] = 1.0
    try:
        coef = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise KernelConstructionError(f"singular moment matrix on [{lo}, {hi}]") from exc
    if not np.all(np.isfinite(coef)):
        raise KernelConstructionError(f"ill-conditioned moment matrix on [{lo}, {hi}]")
    return tuple(float(c) for c in coef)


def build_boundary_kernel(spec: KernelSpec, w: float) -> BoundaryKernel:
    a, b = spec.domain
    if not a <= w <= b:
        raise ValueError(f"centre {w} outside domain {spec.domain}")
    lo, hi = _truncation(spec, float(w))
    coef = _coefficients(spec.family, spec.order, float(lo), float(hi))
    return BoundaryKernel(float(w), float(lo), float(hi), coef)


def eval_kernel(kernel: BoundaryKernel, spec: KernelSpec, s):
    """k_h(s, w) for the kernel centred at ``kernel.center``."""
    s = np.asarray(s, dtype=float)
    h = spec.bandwidth
    u = (s - kernel.center) / h
    inside = (u >= kernel.lo) & (u <= kernel.hi)
    val = base_kernel(spec.family, u) * P.polyval(u, kernel.coefficients) / h
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def kernel_moment(kernel: BoundaryKernel, spec: KernelSpec, r: int) -> float:
    """Integral of (s - w)**r k_h(s, w) over the domain."""
    if r < 0:
        raise ValueError("moment index must be non-negative")
    total = 0.0
    for j, c in enumerate(kernel.coefficients):
        total += c * base_moment(spec.family, r + j, kernel.lo, kernel.hi)
    return spec.bandwidth**r * total


def coefficient_table(spec: KernelSpec, grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-grid-point (coefficients [d, p], lo [d], hi [d])."""
    grid = np.asarray(grid, dtype=float)
    kernels = [build_boundary_kernel(spec, w) for w in grid]
    coef = np.array([k.coefficients for k in kernels])
    lo = np.array([k.lo for k in kernels])
    hi = np.array([k.hi for k in kernels])
    return coef, lo, hi


def kernel_matrix(spec: KernelSpec, s, grid, table=None) -> np.ndarray:
    """Matrix of k_h(s_l, w_m), shape (len(s), len(grid)).

    NaN entries of ``s`` (missing edges) give zero rows.
    """
    s = np.asarray(s, dtype=float)
    grid = np.asarray(grid, dtype=float)
    coef, lo, hi = table if table is not None else coefficient_table(spec, grid)
    h = spec.bandwidth
    u = (s[:, None] - grid[None, :]) / h
    inside = (u >= lo) & (u <= hi)
    u = np.where(inside, u, 0.0)
    poly = np.zeros_like(u)
    for j in range(coef.shape[1] - 1, -1, -1):
        poly = poly * u + coef[:, j]
    out = base_kernel(spec.family, u) * poly / h
    out[~inside] = 0.0
    return out


@lru_cache(maxsize=256)
def _lipschitz_sweep(
    family: str, order: int, span: float, points_per_h: int, interior: bool
) -> float:
    # Normalised coordinates (h = 1): the slope found here is h**2 times the
    # slope at bandwidth h, so it is C_L directly.
    spec = KernelSpec(family, order, 1.0, (0.0, span))
    m = int(math.ceil(span * points_per_h)) + 1
    w = np.linspace(0.0, span, m)
    s = np.linspace(0.0, span, 2 * m - 1)
    if interior:
        w = w[(w >= 1.0) & (w <= span - 1.0)]
    k = kernel_matrix(spec, s, w)
    slope = np.abs(np.diff(k, axis=1)) / np.diff(w)
    return float(slope.max())


def lipschitz_constants(
    spec: KernelSpec, points_per_h: int = 200, interior_only: bool = False
) -> LipschitzConstants:
    """Grid-sweep estimate of C_L and the implied sup-norm constant C_k.

    Kernels only depend on the truncation geometry, which is the same for
    every domain at least 2h long, so the sweep runs on a normalised domain.
    ``interior_only`` restricts the centres to points at least h from both
    endpoints (needs a domain of length >= 2h).
    """
    if points_per_h < 200:
        raise ValueError("need at least 200 sweep points per bandwidth")
    span = min(spec.length / spec.bandwidth, 2.0 if not interior_only else 3.0)
    if interior_only and span < 2.0:
        raise ValueError("domain has no interior points")
    c_l = _lipschitz_sweep(
        spec.family, spec.order, round(span, 12), points_per_h, interior_only
    )
    return LipschitzConstants(C_L=c_l, C_k=2.0 * c_l + 1.0 + 1.0 / spec.length)


def interior_constants(family: str, order: int) -> tuple[float, float]:
    """(integral of K_p^2, integral of u^p K_p) for the untruncated order-p kernel."""
    family = _check_family(family)
    coef = np.array(_coefficients(family, order, -1.0, 1.0))
    roughness = 0.0
    for left, right, piece in _PIECES[family]:
        kp = P.polymul(piece, coef)
        anti = P.polyint(P.polymul(kp, kp))
        roughness += P.polyval(right, anti) - P.polyval(left, anti)
    mu = sum(c * base_moment(family, order + j) for j, c in enumerate(coef))
    return float(roughness), float(mu)
