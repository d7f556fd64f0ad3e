"""Rule-of-thumb and AIMSE-optimal bandwidths for dyadic density estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DegenerateInputError, DyadicDataset
from .kernels import _check_family, interior_constants

# Rule-of-thumb constants for second-order kernels. Triangular and
# Epanechnikov are the published values; uniform is the normal-reference
# constant from the AIMSE formula.
ROT_CONSTANTS = {"epanechnikov": 2.435, "triangular": 2.576, "uniform": 1.843}


@dataclass(frozen=True)
class BandwidthSelection:
    h: float
    method: str
    constant: float
    effective_n: float


def rot_bandwidth(dataset: DyadicDataset, family: str = "epanechnikov") -> BandwidthSelection:
    """Silverman-type bandwidth using the present edge values.

    h = C(K) * min(sd, IQR / 1.349) * (n (n - 1) / 2) ** (-1/5), n the node count.
    """
    family = _check_family(family)
    vals = dataset.present_values()
    if vals.size < 2:
        raise DegenerateInputError("need at least two present edges for a bandwidth")
    sd = float(np.std(vals, ddof=1))
    q75, q25 = np.percentile(vals, [75, 25])
    spread = min(sd, float(q75 - q25) / 1.349)
    if not spread > 0:
        raise DegenerateInputError("edge values have zero dispersion")
    big_n = dataset.n * (dataset.n - 1) / 2
    c = ROT_CONSTANTS[family]
    return BandwidthSelection(c * spread * big_n ** (-0.2), "ROT", c, big_n)


def aimse_constant(family: str, p: int, f, f_p, nu, grid) -> float:
    """Bandwidth constant multiplying (n(n-1)/2) ** (-1/(2p+1))."""
    family = _check_family(family)
    grid = np.asarray(grid, dtype=float)
    f, f_p, nu = (np.broadcast_to(np.asarray(x, dtype=float), grid.shape) for x in (f, f_p, nu))
    num_int = np.trapezoid(f * nu, grid)
    den_int = np.trapezoid(f_p**2 * nu, grid)
    if not den_int > 0:
        raise ArithmeticError("integrated squared p-th derivative is zero; h* undefined")
    roughness, mu_p = interior_constants(family, p)
    ratio = (
        math.factorial(p) * math.factorial(p - 1) * num_int * roughness
        / (2.0 * den_int * mu_p**2)
    )
    return ratio ** (1.0 / (2 * p + 1))


def aimse_bandwidth(f, f_p, nu, grid, family: str, p: int, n: int) -> BandwidthSelection:
    """AIMSE-minimising bandwidth from tabulated density and derivative curves."""
    c = aimse_constant(family, p, f, f_p, nu, grid)
    big_n = n * (n - 1) / 2
    return BandwidthSelection(c * big_n ** (-1.0 / (2 * p + 1)), "AIMSE", c, big_n)
