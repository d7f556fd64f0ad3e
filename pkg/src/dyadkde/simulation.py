"""The three-point latent-community design, its closed-form truth, and a
Monte Carlo harness for coverage studies."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .bandwidth import rot_bandwidth
from .data import DyadicDataset
from .estimator import check_grid, make_grid, pair_kernels
from .inference import fit, order_quantile, pointwise_intervals, sup_draws, uniform_band
from .kernels import KernelSpec, coefficient_table

LATENT = np.array([-1.0, 0.0, 1.0])
DEGENERACY_TOL = 1e-12


@dataclass(frozen=True)
class PiParams:
    p1: float
    p2: float
    p3: float

    def __post_init__(self):
        probs = (self.p1, self.p2, self.p3)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"{probs} is not a probability vector")

    @property
    def probs(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3])

    def label(self) -> str:
        return "(" + ",".join(f"{x:g}" for x in self.probs) + ")"

    @classmethod
    def parse(cls, text: str) -> "PiParams":
        from fractions import Fraction

        parts = [float(Fraction(x.strip())) for x in text.strip("() ").split(",")]
        return cls(*parts)


DESIGN_PIS = (PiParams(0.5, 0.0, 0.5), PiParams(0.25, 0.0, 0.75), PiParams(0.2, 0.2, 0.6))


def generate(pi: PiParams, n: int, seed) -> tuple[DyadicDataset, np.ndarray]:
    """W_ij = A_i A_j + V_ij with A_i on {-1, 0, 1} and V_ij standard normal."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    a = LATENT[rng.choice(3, size=n, p=pi.probs)]
    i, j = np.triu_indices(n, 1)
    w = a[i] * a[j] + rng.standard_normal(i.size)
    return DyadicDataset.complete(n, w), a


def true_density(pi: PiParams, w):
    w = np.asarray(w, dtype=float)
    p1, p2, p3 = pi.probs
    return (p1**2 + p3**2) * norm.pdf(w - 1) + p2 * (2 - p2) * norm.pdf(w) + 2 * p1 * p3 * norm.pdf(w + 1)


def conditional_density(pi: PiParams, w, a: float):
    """Density of W_ij given A_i = a."""
    w = np.asarray(w, dtype=float)
    p1, p2, p3 = pi.probs
    return p1 * norm.pdf(w + a) + p2 * norm.pdf(w) + p3 * norm.pdf(w - a)


@dataclass(frozen=True)
class DegeneracyProfile:
    grid: np.ndarray
    variance: np.ndarray
    D_lo: float
    D_up: float
    classification: str


def degeneracy_profile(pi: PiParams, grid, tol: float = DEGENERACY_TOL) -> DegeneracyProfile:
    """Variance over A of f_{W|A}(w|A) at each grid point, and its extremes."""
    grid = np.asarray(grid, dtype=float)
    cond = np.stack([conditional_density(pi, grid, a) for a in LATENT])
    mean = pi.probs @ cond
    var = pi.probs @ (cond - mean) ** 2
    lo, up = float(var.min()), float(var.max())
    if up <= tol:
        kind = "total"
    elif lo <= tol:
        kind = "partial"
    else:
        kind = "none"
    return DegeneracyProfile(grid, var, lo, up, kind)


# Conditional kernel means -------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _kernel_against(spec: KernelSpec, grid, density) -> np.ndarray:
    """Integral over the domain of k_h(s, w_m) density(s) ds for each grid point.

    Gauss-Legendre on each smooth piece of the truncated support (split at the
    centre, where the triangular kernel has its kink).
    """
    grid = np.asarray(grid, dtype=float)
    coef, lo, hi = coefficient_table(spec, grid)
    h = spec.bandwidth
    out = np.zeros(grid.size)
    for m, w in enumerate(grid):
        pieces = [(lo[m], min(hi[m], 0.0)), (max(lo[m], 0.0), hi[m])]
        for u0, u1 in pieces:
            if u1 <= u0:
                continue
            half = 0.5 * (u1 - u0)
            u = u0 + half * (_GL_NODES + 1.0)
            s = w + h * u
            k = spec_kernel(spec, coef[m], u) / h
            out[m] += half * h * np.sum(_GL_WEIGHTS * k * density(s))
    return out


def spec_kernel(spec: KernelSpec, coef, u):
    from .kernels import base_kernel

    return base_kernel(spec.family, u) * np.polynomial.polynomial.polyval(u, coef)


@dataclass(frozen=True)
class HoeffdingTerms:
    fhat: np.ndarray
    truth: np.ndarray
    B: np.ndarray
    L: np.ndarray
    E: np.ndarray
    Q: np.ndarray

    def residual(self) -> np.ndarray:
        return self.fhat - self.truth - self.B - self.L - self.E - self.Q


def hoeffding_components(
    dataset: DyadicDataset, latent, pi: PiParams, spec: KernelSpec, grid
) -> HoeffdingTerms:
    """Split f-hat - f into bias, Hajek, idiosyncratic and second-order parts."""
    grid = check_grid(grid, spec.domain)
    a = np.asarray(latent, dtype=float)
    n = dataset.n
    # m[c] = E[k_h(W, w) | A_i A_j = c] for c in {-1, 0, 1}
    m = {c: _kernel_against(spec, grid, lambda s, c=c: norm.pdf(s - c)) for c in (-1.0, 0.0, 1.0)}
    p1, p2, p3 = pi.probs
    # g(a) = E[k_h | A_i = a]; summation order kept identical for a = +-1
    g = {
        -1.0: p1 * m[1.0] + p2 * m[0.0] + p3 * m[-1.0],
        0.0: p1 * m[0.0] + p2 * m[0.0] + p3 * m[0.0],
        1.0: p1 * m[-1.0] + p2 * m[0.0] + p3 * m[1.0],
    }
    mean_k = p1 * g[-1.0] + p2 * g[0.0] + p3 * g[1.0]
    truth = true_density(pi, grid)

    k = pair_kernels(dataset, spec, grid)
    i, j = dataset.pairs()
    prod = a[i] * a[j]
    g_node = np.stack([g[float(x)] for x in a])
    m_pair = np.stack([m[-1.0], m[0.0], m[1.0]])[(prod + 1).astype(int)]
    n_pairs = dataset.n_pairs

    fhat_vals = k.sum(axis=0) / n_pairs
    L = (2.0 / n) * (g_node - mean_k).sum(axis=0)
    E = (k - m_pair).sum(axis=0) / n_pairs
    Q = (m_pair - g_node[i] - g_node[j] + mean_k).sum(axis=0) / n_pairs
    return HoeffdingTerms(fhat_vals, truth, mean_k - truth, L, E, Q)


# Monte Carlo study -------------------------------------------------------


@dataclass(frozen=True)
class StudyConfig:
    pis: tuple = DESIGN_PIS
    n: int = 300
    reps: int = 500
    d: int = 25
    B: int = 2000
    p: int = 2
    p_prime: int = 4
    alpha: float = 0.05
    seed: int = 0
    domain: tuple = (-2.0, 2.0)
    family: str = "epanechnikov"
    workers: int = 1

    @classmethod
    def full_scale(cls, **overrides) -> "StudyConfig":
        base = dict(n=3000, reps=2000, d=50, B=10_000)
        base.update(overrides)
        return cls(**base)


@dataclass
class StudyRow:
    pi: str
    degeneracy: str
    p: int
    h_rot: float
    rimse: float
    ucb_cr: float
    ucb_aw: float
    pci_cr: float
    pci_aw: float
    reps: int
    seed: int
    runtime_s: float = 0.0
    failed: int = 0


@dataclass
class MCReport:
    rows: list
    config: StudyConfig
    per_rep: dict = field(default_factory=dict)

    def row(self, pi: PiParams, p: int) -> StudyRow:
        for r in self.rows:
            if r.pi == pi.label() and r.p == p:
                return r
        raise KeyError((pi.label(), p))

    def to_csv(self, path) -> None:
        names = list(StudyRow.__dataclass_fields__)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=names)
            writer.writeheader()
            for r in self.rows:
                writer.writerow(asdict(r))


def rep_seed(base: int, pi_index: int, rep: int) -> int:
    """Deterministic per-replication seed, independent of scheduling."""
    ss = np.random.SeedSequence([int(base), pi_index, rep])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def one_replication(pi: PiParams, cfg: StudyConfig, seed: int) -> dict:
    """Run both kernel orders on one simulated network."""
    data, _ = generate(pi, cfg.n, seed)
    h = rot_bandwidth(data, cfg.family).h
    grid = make_grid(cfg.domain, cfg.d)
    truth = true_density(pi, grid)
    dw = float(grid[1] - grid[0])
    out = {"h": h}
    for order in (cfg.p, cfg.p_prime):
        spec = KernelSpec(cfg.family, order, h, cfg.domain)
        try:
            res = fit(data, spec, grid, refine_iter=60, refine_tol=1e-2)
        except ArithmeticError:
            # e.g. a negative raw variance at tiny n; the rep is reported as failed
            out[order] = None
            continue
        draws = sup_draws(res.psd, cfg.B, seed)
        q = order_quantile(draws, cfg.alpha)
        ucb = uniform_band(res.estimate, res.psd, q, cfg.alpha, cfg.B)
        pci = pointwise_intervals(res.estimate, res.psd, cfg.alpha)
        err = res.estimate.values - truth
        out[order] = {
            "ise_root": math.sqrt(float(np.sum(err**2) * dw)),
            "ucb_cover": ucb.covers(truth),
            "ucb_width": float(np.mean(2 * ucb.halfwidth)),
            "pci_cover": pci.covers(truth),
            "pci_width": float(np.mean(2 * pci.halfwidth)),
        }
    return out


def _run_block(args):
    pi, cfg, seeds = args
    return [one_replication(pi, cfg, s) for s in seeds]


def _classification_grid(domain) -> np.ndarray:
    """Fine grid for labelling a design; always contains 0 when it is in range."""
    a, b = domain
    grid = make_grid(domain, 401)
    return np.union1d(grid, [0.0]) if a <= 0.0 <= b else grid


def mc_study(cfg: StudyConfig) -> MCReport:
    """Coverage study over the configured designs.

    Replications whose covariance fit fails numerically are counted in
    ``failed`` and left out of the rates.
    """
    if cfg.reps < 2:
        raise ValueError("need at least two replications")
    rows = []
    per_rep = {}
    for pi_index, pi in enumerate(cfg.pis):
        started = time.perf_counter()
        seeds = [rep_seed(cfg.seed, pi_index, r) for r in range(cfg.reps)]
        if cfg.workers > 1:
            blocks = [seeds[k :: cfg.workers] for k in range(cfg.workers)]
            with ProcessPoolExecutor(cfg.workers) as pool:
                parts = list(pool.map(_run_block, [(pi, cfg, b) for b in blocks]))
            results = [None] * cfg.reps
            for k, part in enumerate(parts):
                results[k :: cfg.workers] = part
        else:
            results = _run_block((pi, cfg, seeds))
        elapsed = time.perf_counter() - started
        per_rep[pi.label()] = results
        kind = degeneracy_profile(pi, _classification_grid(cfg.domain)).classification
        h_mean = float(np.mean([r["h"] for r in results]))
        for order in (cfg.p, cfg.p_prime):
            rs = [r[order] for r in results if r[order] is not None]
            if not rs:
                raise ArithmeticError(f"every replication failed for pi={pi.label()}, p={order}")
            rows.append(
                StudyRow(
                    pi=pi.label(),
                    degeneracy=kind,
                    p=order,
                    h_rot=h_mean,
                    rimse=float(np.mean([r["ise_root"] for r in rs])),
                    ucb_cr=float(np.mean([r["ucb_cover"] for r in rs])),
                    ucb_aw=float(np.mean([r["ucb_width"] for r in rs])),
                    pci_cr=float(np.mean([r["pci_cover"] for r in rs])),
                    pci_aw=float(np.mean([r["pci_width"] for r in rs])),
                    reps=cfg.reps,
                    seed=cfg.seed,
                    runtime_s=elapsed,
                    failed=cfg.reps - len(rs),
                )
            )
    return MCReport(rows, cfg, per_rep)


def generate_two_population(pi0: PiParams, pi1: PiParams, n: int, seed):
    """Population 1's network plus covariates for both populations.

    The covariate is the level index of the latent type, so the true
    reweighting ratio is pi0 / pi1 levelwise. Population 0's types are drawn
    independently of population 1's network.
    """
    from .counterfactual import CovariateSample

    data1, a1 = generate(pi1, n, seed)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    x0 = rng.choice(3, size=n, p=pi0.probs)
    x1 = (a1 + 1).astype(int)
    return data1, CovariateSample((-1, 0, 1), x0, x1), a1
