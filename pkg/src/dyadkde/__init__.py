"""Kernel density estimation and uniform inference for dyadic network data."""

from .bandwidth import BandwidthSelection, aimse_bandwidth, rot_bandwidth
from .counterfactual import (
    CovariateSample,
    PsiWeights,
    SupportError,
    cf_band,
    cf_covariance,
    cf_estimate,
    fit_psi,
    kappa_hat,
    kappa_table,
    pmf_hat,
    psi_hat,
)
from .covariance import CovMatrix, NormalizationError, PSDCovMatrix, psd_project, sigma_hat
from .data import (
    DegenerateInputError,
    DyadicDataset,
    DyadicInputError,
    NetworkSummary,
    from_edge_list,
    read_edge_csv,
    summary,
    trade_volume,
)
from .estimator import DensityEstimate, fhat, make_grid, weighted_fhat
from .inference import (
    RBCConfig,
    TwoSampleResult,
    UniformBand,
    gaussian_quantile,
    pointwise_intervals,
    rbc_band,
    two_sample_test,
    uniform_band,
)
from .kernels import KernelSpec, build_boundary_kernel, lipschitz_constants

__version__ = "0.1.0"
