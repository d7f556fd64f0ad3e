"""Plug-in covariance of the dyadic density estimator and its PSD regularisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .data import DegenerateInputError, DyadicDataset
from .estimator import check_grid, pair_kernels
from .kernels import KernelSpec, LipschitzConstants

PSD_TOL = 1e-8
# Relative eigenvalue floor; covariance entries are often ~1e-4, where the
# absolute floor alone would let visibly indefinite matrices through.
PSD_RTOL = 1e-12
DENOM_FLOOR = 1e-14
CHECK_EVERY = 4
STALL_TOL = 1e-10
LEVEL_RTOL = 1e-4


class NormalizationError(ArithmeticError):
    """Some pair of grid points has a non-positive raw variance sum."""


@dataclass(frozen=True)
class CovMatrix:
    grid: np.ndarray
    entries: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def negative_diagonal(self) -> np.ndarray:
        return np.flatnonzero(np.diag(self.entries) < 0)


@dataclass(frozen=True)
class PSDCovMatrix:
    grid: np.ndarray
    entries: np.ndarray
    objective: float
    lipschitz_bound: float
    method: str
    candidates: dict = field(default_factory=dict)
    excluded_pairs: int = 0


def incidence(n: int) -> sparse.csr_matrix:
    """Sparse node-by-pair incidence matrix in triu order."""
    i, j = np.triu_indices(n, 1)
    cols = np.arange(i.size)
    rows = np.concatenate([i, j])
    data = np.ones(2 * i.size)
    return sparse.csr_matrix((data, (rows, np.concatenate([cols, cols]))), shape=(n, i.size))


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2.0


def sigma_hat(dataset: DyadicDataset, spec: KernelSpec, grid, kernels=None) -> CovMatrix:
    """Leave-one-out plug-in estimate of the covariance of f-hat on the grid.

    Missing pairs enter the sums as zero kernel rows; the complete-network
    formula is then rescaled by the squared mixture weight so it matches the
    present-pair normalisation of :func:`fhat`.
    """
    n = dataset.n
    if n < 3:
        raise DegenerateInputError("covariance estimation needs n >= 3")
    if dataset.n_present < 1:
        raise DegenerateInputError("no present pairs")
    grid = check_grid(grid, spec.domain)
    k = pair_kernels(dataset, spec, grid) if kernels is None else kernels
    s = np.asarray(incidence(n) @ k) / (n - 1)
    f_full = k.sum(axis=0) * (2.0 / (n * (n - 1)))
    entries = (
        (4.0 / n**2) * (s.T @ s)
        - (4.0 / (n**2 * (n - 1) ** 2)) * (k.T @ k)
        - ((4.0 * n - 6.0) / (n * (n - 1))) * np.outer(f_full, f_full)
    )
    rho = dataset.mixture_weight
    entries = _symmetrize(entries) / rho**2
    return CovMatrix(grid, entries, {"n": n, "mixture_weight": rho})


def lipschitz_bound(constants: LipschitzConstants, n: int, h: float) -> float:
    return 4.0 * constants.C_k * constants.C_L / (n * h**3)


class _Problem:
    """The finite-grid version of the sup-norm PSD fitting problem."""

    def __init__(self, raw: np.ndarray, grid: np.ndarray, bound: float):
        self.raw = raw
        self.grid = grid
        self.bound = bound
        diag = np.diag(raw)
        denom2 = diag[:, None] + diag[None, :]
        self.mask = np.abs(denom2) > DENOM_FLOOR
        if np.any(denom2[self.mask] < 0):
            raise NormalizationError(
                "raw covariance has Sigma(w,w) + Sigma(w',w') < 0; consider the ridge option"
            )
        self.denom = np.where(self.mask, np.sqrt(np.abs(denom2)), np.inf)
        self.steps = bound * np.diff(grid)
        self.scale = max(float(np.max(np.abs(raw))), np.finfo(float).tiny)

    def objective(self, m: np.ndarray) -> float:
        if not self.mask.any():
            return 0.0
        return float(np.max(np.abs(m - self.raw)[self.mask] / self.denom[self.mask]))

    def lipschitz_excess(self, m: np.ndarray) -> float:
        if m.shape[0] < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(m, axis=1)) - self.steps))

    def is_feasible(self, m: np.ndarray) -> bool:
        if np.any(m != m.T):
            return False
        if np.linalg.eigvalsh(m)[0] < -min(PSD_TOL, PSD_RTOL * self.scale):
            return False
        return self.lipschitz_excess(m) <= 1e-12 * self.scale

    def repair(self, m: np.ndarray) -> np.ndarray:
        """Shrink a PSD matrix towards zero until the Lipschitz bound holds."""
        if m.shape[0] < 2:
            return m
        slopes = np.abs(np.diff(m, axis=1))
        over = slopes > self.steps
        if not over.any():
            return m
        factor = np.min(self.steps[np.nonzero(over)[1]] / slopes[over])
        return _symmetrize(m * factor * (1.0 - 1e-12))


def project_psd(m: np.ndarray) -> np.ndarray:
    """Frobenius projection onto the PSD cone (eigenvalue clipping)."""
    vals, vecs = np.linalg.eigh(_symmetrize(m))
    out = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return _symmetrize(out)


def lipschitz_correct(m: np.ndarray, steps: np.ndarray, sweeps: int = 3) -> np.ndarray:
    """Rowwise correction clamping consecutive differences, anchored on the diagonal."""
    out = m.copy()
    d = out.shape[0]
    rows = np.arange(d)
    for _ in range(sweeps):
        for k in range(1, d):
            i = rows[: d - k]
            j = i + k
            prev = out[i, j - 1]
            out[i, j] = np.clip(out[i, j], prev - steps[j - 1], prev + steps[j - 1])
            i = rows[k:]
            j = i - k
            prev = out[i, j + 1]
            out[i, j] = np.clip(out[i, j], prev - steps[j], prev + steps[j])
        out = _symmetrize(out)
    return out


def _dykstra_frobenius(prob: _Problem, max_iter: int, tol: float) -> np.ndarray:
    x = prob.raw.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = project_psd(x + p)
        p = x + p - y
        x_new = lipschitz_correct(y + q, prob.steps)
        q = y + q - x_new
        change = np.max(np.abs(x_new - x))
        x = x_new
        if change < tol * prob.scale and prob.lipschitz_excess(y) <= tol * prob.scale:
            break
    return prob.repair(project_psd(x))


def _project_slabs(m: np.ndarray, steps: np.ndarray, parity: int) -> np.ndarray:
    """Exact projection onto |m[:, j+1] - m[:, j]| <= steps[j] for j of one parity.

    Constraints of one parity touch disjoint column pairs, so the projection
    splits into independent two-variable problems.
    """
    out = m.copy()
    j = np.arange(parity, m.shape[1] - 1, 2)
    if j.size == 0:
        return out
    left, right = out[:, j], out[:, j + 1]
    gap = right - left
    excess = np.sign(gap) * np.maximum(np.abs(gap) - steps[j], 0.0) / 2.0
    out[:, j] = left + excess
    out[:, j + 1] = right - excess
    return out


def _box_feasible_point(prob: _Problem, t: float, start: np.ndarray, max_iter: int):
    """Dykstra over the PSD cone, the weighted box of radius t around raw and
    the two halves of the rowwise Lipschitz constraints.

    Returns the best feasible (PSD, Lipschitz) iterate and its objective.
    """
    lo = prob.raw - t * prob.denom
    hi = prob.raw + t * prob.denom
    projections = (
        project_psd,
        lambda m: np.clip(m, lo, hi),
        lambda m: _project_slabs(m, prob.steps, 0),
        lambda m: _project_slabs(m, prob.steps, 1),
    )
    x = start.copy()
    incr = [np.zeros_like(x) for _ in projections]
    best, best_obj = None, np.inf
    last = x
    for it in range(max_iter):
        for k, proj in enumerate(projections):
            y = proj(x + incr[k])
            incr[k] = x + incr[k] - y
            x = y
        # checking feasibility costs another eigendecomposition, so not every sweep
        if it % CHECK_EVERY != CHECK_EVERY - 1 and it != max_iter - 1:
            continue
        cand = prob.repair(project_psd(x))
        obj = prob.objective(cand)
        if obj < best_obj:
            best, best_obj = cand, obj
        if obj <= t * (1.0 + LEVEL_RTOL):
            break
        # on an empty intersection the sweep end point settles while the box stays out of reach
        if np.max(np.abs(x - last)) <= STALL_TOL * prob.scale:
            break
        last = x
    return best, best_obj


def _level_lower_bound(prob: _Problem) -> float:
    """For a PSD M and a unit eigenvector v of raw with eigenvalue lam < 0,
    v'(M - raw)v >= -lam while |v'(M - raw)v| <= t |v|' D |v|."""
    vals, vecs = np.linalg.eigh(prob.raw)
    best = 0.0
    for lam, v in zip(vals, vecs.T):
        if lam >= 0:
            break
        a = np.abs(v)
        spread = a @ np.where(prob.mask, prob.denom, 0.0) @ a
        # excluded pairs are unconstrained, so the bound only holds when v avoids them
        if np.any(~prob.mask & (np.outer(a, a) > 0)) or spread <= 0:
            continue
        best = max(best, -lam / spread)
    return best


def _minimize_sup(prob: _Problem, upper: float, best: np.ndarray, max_iter: int, rel_tol: float):
    # bisect on the level; the best feasible point found is tracked separately
    lower, level, best_obj = min(_level_lower_bound(prob), upper), upper, upper
    start = prob.raw
    while level - lower > rel_tol * max(level, 1e-300):
        t = 0.5 * (lower + level)
        cand, obj = _box_feasible_point(prob, t, start, max_iter)
        if obj < best_obj:
            best, best_obj = cand, obj
        # a near miss at level t counts as success
        if obj <= t * (1.0 + LEVEL_RTOL):
            level = t
            start = cand
        else:
            lower = t
    return best, best_obj


def psd_project(
    raw: CovMatrix,
    constants: LipschitzConstants,
    n: int,
    h: float,
    ridge: bool = False,
    max_iter: int = 500,
    tol: float = 1e-9,
    refine_iter: int = 200,
    refine_tol: float = 1e-4,
) -> PSDCovMatrix:
    """Feasible, near-optimal solution of the sup-norm PSD fitting problem.

    Minimises max |M - raw| / sqrt(raw(w,w) + raw(w',w')) over symmetric PSD
    matrices obeying the rowwise Lipschitz bound 4 C_k C_L / (n h^3). The
    answer is the best of several feasible candidates: raw itself, the
    clipped eigen-decomposition, a Frobenius Dykstra run, the zero matrix and
    a bisection on the sup-norm level.
    """
    entries = np.array(raw.entries, dtype=float)
    if not np.array_equal(entries, entries.T):
        raise ValueError("raw covariance must be exactly symmetric")
    if ridge:
        d = entries.shape[0]
        entries = entries + np.eye(d) * (1e-12 * np.trace(entries) / d)
    bound = lipschitz_bound(constants, n, h)
    prob = _Problem(entries, np.asarray(raw.grid, dtype=float), bound)
    excluded = int((~prob.mask).sum())

    if prob.is_feasible(entries):
        return PSDCovMatrix(raw.grid, entries, 0.0, bound, "raw", {"raw": 0.0}, excluded)

    candidates = {
        "zero": np.zeros_like(entries),
        "eigen_clip": prob.repair(project_psd(lipschitz_correct(project_psd(entries), prob.steps))),
        "dykstra": _dykstra_frobenius(prob, max_iter, tol),
    }
    scores = {}
    for name, m in candidates.items():
        scores[name] = prob.objective(m) if prob.is_feasible(m) else np.inf
    name = min(scores, key=scores.get)
    refined, obj = _minimize_sup(prob, scores[name], candidates[name], refine_iter, refine_tol)
    if prob.is_feasible(refined) and prob.objective(refined) < scores[name]:
        candidates["sup_bisection"] = refined
        scores["sup_bisection"] = prob.objective(refined)
        name = "sup_bisection"
    return PSDCovMatrix(
        raw.grid,
        candidates[name],
        scores[name],
        bound,
        name,
        {k: float(v) for k, v in scores.items()},
        excluded,
    )
