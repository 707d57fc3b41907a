"""Gaussian-limit simulation and uniform confidence bands for parametric Monte-Carlo integrals.

For I(t) = E v(t, beta) estimated by I_n(t) = mean of v(t, beta_j), the
limit of sqrt(n) * sup_t |I_n - I| is sup_t |zeta(t)| with zeta centered
Gaussian with the covariance of v(t, beta). Its upper-eps quantile U(eps)
gives the band I_n(t) +- U(eps) / sqrt(n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .approximation import PeriodicGrid
from .processes import (
    TAG_INTEGRAND,
    TAG_LIMIT,
    TAG_PILOT,
    TAG_REFERENCE,
    CovarianceMatrix,
    PathEnsemble,
    ProcessSpec,
    empirical_covariance,
    normalized_sum,
    run_blocks,
    sample,
)

JITTER_START = 1e-12
JITTER_CAP = 1e-6  # relative to the largest diagonal entry
ZERO_VARIANCE = 1e-24  # below this every entry is roundoff from centering
MIN_EXCEEDANCES = 100


class NumericalError(ArithmeticError):
    """Covariance factorization failed or a computation left the float range."""


@dataclass
class GaussianLimitSampler:
    cov: CovarianceMatrix
    chol_factor: np.ndarray = field(init=False, repr=False)
    jitter_used: float = field(init=False)

    def __post_init__(self):
        entries = self.cov.entries
        top = float(np.max(np.diag(entries))) if entries.size else 0.0
        n = entries.shape[0]
        if top <= ZERO_VARIANCE:
            if np.any(np.abs(entries) > ZERO_VARIANCE):
                raise NumericalError("covariance has nonpositive diagonal but nonzero entries")
            self.chol_factor, self.jitter_used = np.zeros_like(entries), 0.0
            return
        jitter = 0.0
        while True:
            try:
                self.chol_factor = np.linalg.cholesky(entries + jitter * np.eye(n))
                self.jitter_used = jitter
                return
            except np.linalg.LinAlgError:
                jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
                if jitter > JITTER_CAP * top:
                    defect = self.cov.psd_defect()
                    raise NumericalError(
                        f"Cholesky failed up to jitter {JITTER_CAP * top:.3e}; "
                        f"relative negative eigenvalue {defect:.3e}"
                    ) from None

    @property
    def nodes(self) -> np.ndarray:
        return self.cov.nodes

    def draw(self, rng: np.random.Generator, rows: int) -> np.ndarray:
        z = rng.standard_normal((rows, self.chol_factor.shape[0]))
        return z @ self.chol_factor.T

    def map_blocks(self, fn, count: int, seed: int, threads: int = 1, tag: int = TAG_LIMIT) -> list:
        """``fn(paths_block)`` for each block of ``count`` limit paths, without keeping the paths."""
        return run_blocks(lambda rng, rows: fn(self.draw(rng, rows)), count, seed, tag, threads)

    def sup_norms(self, count: int, seed: int, threads: int = 1, one_sided: bool = False,
                  tag: int = TAG_LIMIT) -> np.ndarray:
        reduce = (lambda p: p.max(axis=1)) if one_sided else (lambda p: np.abs(p).max(axis=1))
        return np.concatenate(self.map_blocks(reduce, count, seed, threads, tag))


def gaussian_limit_sample(cov: CovarianceMatrix, count: int, seed: int = 0, threads: int = 1,
                          grid: PeriodicGrid | None = None) -> PathEnsemble:
    sampler = GaussianLimitSampler(cov)
    paths = np.vstack(sampler.map_blocks(lambda p: p, count, seed, threads))
    return PathEnsemble(cov.nodes, paths, seed, grid)


@dataclass
class TailCurve:
    u_grid: np.ndarray
    gamma: np.ndarray
    stderr: np.ndarray
    replicas: int

    def to_rows(self):
        return zip(self.u_grid, self.gamma, self.stderr)


def tail_curve(sups, u_grid=None) -> TailCurve:
    """Empirical ``P(sup > u)`` with Wilson-interval half-widths (z = 1) as errors.

    Without ``u_grid`` the curve is evaluated at 0 and at every distinct sample value.
    """
    sups = np.sort(np.asarray(sups, dtype=np.float64))
    if sups.size == 0:
        raise ValueError("empty sample")
    if u_grid is None:
        u_grid = np.unique(np.concatenate([[0.0], sups]))
    u_grid = np.asarray(u_grid, dtype=np.float64)
    if np.any(np.diff(u_grid) <= 0):
        raise ValueError("u_grid must be strictly increasing")
    n = sups.size
    gamma = (n - np.searchsorted(sups, u_grid, side="right")) / n
    denom = 1.0 + 1.0 / n
    half = np.sqrt(gamma * (1.0 - gamma) / n + 1.0 / (4.0 * n * n)) / denom
    return TailCurve(u_grid, gamma, half, n)


def sup_tail(ens: PathEnsemble, u_grid=None, one_sided: bool = False) -> TailCurve:
    sups = ens.paths.max(axis=1) if one_sided else ens.sup_norms()
    return tail_curve(sups, u_grid)


def quantile_U(curve: TailCurve, epsilon: float, min_exceedances: int = MIN_EXCEEDANCES) -> float:
    """Largest root of ``gamma(u) = epsilon`` by linear interpolation of the curve.

    Needs ``epsilon * replicas >= min_exceedances``; otherwise raises,
    asking for more replicas.
    """
    if epsilon >= 1.0:
        return 0.0
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if epsilon * curve.replicas < min_exceedances:
        raise ValueError(
            f"epsilon={epsilon:g} below curve resolution: need >= {min_exceedances} expected "
            f"exceedances, have {epsilon * curve.replicas:.1f}; use more replicas"
        )
    g = curve.gamma
    above = np.nonzero(g >= epsilon)[0]
    if above.size == 0:
        return float(curve.u_grid[0])
    i = int(above[-1])
    if i == len(g) - 1:
        return float(curve.u_grid[i])
    u0, u1, g0, g1 = curve.u_grid[i], curve.u_grid[i + 1], g[i], g[i + 1]
    return float(u0 + (g0 - epsilon) / (g0 - g1) * (u1 - u0))


def bridge_exceedance(paths: np.ndarray, level: float, step: float) -> np.ndarray:
    """Per-path ``P(max over continuous time > level | node values)`` for Brownian paths.

    Columns are node values at times step, 2*step, ...; the path starts at 0.
    Between nodes the path is a Brownian bridge, so each segment survives
    with probability 1 - exp(-2 (level - a)(level - b) / step).
    """
    return 1.0 - kernels.bridge_survival(paths, level, step)


@dataclass
class BandResult:
    epsilon: float
    U_eps: float
    n: int
    band_halfwidth: float
    I_n: np.ndarray
    nodes: np.ndarray
    reference: np.ndarray | None = None
    sup_error: float | None = None
    covered: bool | None = None
    jitter_used: float = 0.0
    tail: TailCurve | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "U_eps": self.U_eps,
            "n": self.n,
            "band_halfwidth": self.band_halfwidth,
            "sup_error": self.sup_error,
            "covered": self.covered,
            "jitter_used": self.jitter_used,
        }

    def rows(self):
        for t, v in zip(self.nodes, self.I_n):
            yield t, v, v - self.band_halfwidth, v + self.band_halfwidth


BETA_LAWS = {"uniform": {"low", "high"}, "normal": {"mean", "std"}}


def check_beta(beta_spec: dict) -> None:
    law = beta_spec.get("law", "uniform")
    if law not in BETA_LAWS:
        raise ValueError(f"beta.law: unknown law {law!r}, expected one of {sorted(BETA_LAWS)}")
    extra = set(beta_spec) - BETA_LAWS[law] - {"law"}
    if extra:
        raise ValueError(f"beta.{sorted(extra)[0]}: unknown key for law {law!r}")
    if law == "uniform" and not beta_spec.get("low", 0.0) < beta_spec.get("high", 1.0):
        raise ValueError("beta.high: must exceed beta.low")
    if law == "normal" and not beta_spec.get("std", 1.0) > 0:
        raise ValueError("beta.std: must be positive")


def draw_beta(rng: np.random.Generator, rows: int, beta_spec: dict) -> np.ndarray:
    law = beta_spec.get("law", "uniform")
    if law == "uniform":
        return rng.uniform(beta_spec.get("low", 0.0), beta_spec.get("high", 1.0), size=rows)
    if law == "normal":
        return rng.normal(beta_spec.get("mean", 0.0), beta_spec.get("std", 1.0), size=rows)
    raise ValueError(f"beta.law: unknown law {law!r}")


def _cos_times_x(t, x):
    return np.outer(x, np.cos(t))


def _constant_in_x(t, x):
    return np.broadcast_to(np.cos(t), (len(x), len(t))).copy()


def _indicator(t, x):
    # empirical CDF of x at the points t / (2 pi)
    return (x[:, None] <= t[None, :] / (2.0 * np.pi)).astype(np.float64)


def _exp_tx(t, x):
    return np.exp(np.outer(x, np.cos(t)))


INTEGRANDS = {
    "cos_x": _cos_times_x,
    "constant": _constant_in_x,
    "indicator": _indicator,
    "exp_cos": _exp_tx,
}


def integrand_mean(integrand, nodes, beta_spec, count, seed, tag, threads=1) -> np.ndarray:
    """``mean_j v(t, beta_j)`` over ``count`` fresh draws, accumulated block by block."""
    parts = run_blocks(lambda rng, rows: integrand(nodes, draw_beta(rng, rows, beta_spec)).sum(axis=0),
                       count, seed, tag, threads)
    return np.sum(parts, axis=0) / count


def param_integral_band(integrand, beta_spec: dict, n: int, epsilon: float = 0.05, replicas: int = 10_000,
                        seed: int = 0, grid: PeriodicGrid | None = None, pilot: int = 2000,
                        reference: np.ndarray | None = None, reference_factor: int = 100,
                        threads: int = 1) -> BandResult:
    """Monte-Carlo estimate of I on the grid with a uniform band of half-width U(eps)/sqrt(n).

    The limit covariance comes from an independent pilot sample; the
    reference I (for the coverage flag) is a separate run with
    ``reference_factor * n`` draws unless given.
    """
    if isinstance(integrand, str):
        if integrand not in INTEGRANDS:
            raise ValueError(f"integrand: unknown name {integrand!r}, expected one of {sorted(INTEGRANDS)}")
        integrand = INTEGRANDS[integrand]
    check_beta(beta_spec)
    grid = grid or PeriodicGrid(64)
    nodes = grid.nodes
    I_n = integrand_mean(integrand, nodes, beta_spec, n, seed, TAG_INTEGRAND, threads)
    pilot_rows = np.vstack(run_blocks(lambda rng, rows: integrand(nodes, draw_beta(rng, rows, beta_spec)),
                                      pilot, seed, TAG_PILOT, threads))
    cov = empirical_covariance(PathEnsemble(nodes, pilot_rows))
    if reference is None:
        reference = integrand_mean(integrand, nodes, beta_spec, reference_factor * n, seed, TAG_REFERENCE, threads)
    return _band_from(I_n, cov, n, epsilon, replicas, seed, threads, reference)


def param_integral_band_table(table: np.ndarray, nodes: np.ndarray, n: int, epsilon: float = 0.05,
                              replicas: int = 10_000, seed: int = 0, threads: int = 1) -> BandResult:
    """Band from tabulated values ``table[i, j] = v(t_j, beta_i)`` of iid draws.

    The first ``n`` rows give I_n; the covariance and the reference use all rows.
    """
    table = np.asarray(table, dtype=np.float64)
    if n > table.shape[0]:
        raise ValueError(f"n={n} exceeds the {table.shape[0]} tabulated draws")
    I_n = table[:n].mean(axis=0)
    cov = empirical_covariance(PathEnsemble(np.asarray(nodes), table))
    return _band_from(I_n, cov, n, epsilon, replicas, seed, threads, table.mean(axis=0))


def _band_from(I_n, cov, n, epsilon, replicas, seed, threads, reference) -> BandResult:
    sampler = GaussianLimitSampler(cov)
    curve = tail_curve(sampler.sup_norms(replicas, seed, threads))
    U = quantile_U(curve, epsilon)
    half = U / math.sqrt(n)
    sup_err = float(np.max(np.abs(I_n - reference)))
    # summation roundoff must not count as a miss for a zero-width band
    slack = 1e-12 * max(1.0, float(np.max(np.abs(reference))))
    return BandResult(epsilon, U, n, half, I_n, cov.nodes, reference, sup_err, bool(sup_err <= half + slack),
                      sampler.jitter_used, curve)


def tail_fit(curve: TailCurve, sigma2: float, gamma_range=(1e-4, 1e-1)):
    """Fit ``gamma(u) ~ K u^(kappa-1) exp(-u^2 / (2 sigma2))``.

    Least squares of ``log gamma + u^2/(2 sigma2)`` on ``log u`` over the
    curve points with gamma in ``gamma_range``. Returns (K, kappa, rmse).
    """
    g = curve.gamma
    keep = (g >= gamma_range[0]) & (g <= gamma_range[1]) & (curve.u_grid > 0)
    if np.count_nonzero(keep) < 5:
        raise ValueError("tail_fit needs at least 5 curve points inside the gamma range")
    u = curve.u_grid[keep]
    y = np.log(g[keep]) + u * u / (2.0 * sigma2)
    x = np.log(u)
    slope, intercept = np.polyfit(x, y, 1)
    rmse = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(math.exp(intercept)), float(slope + 1.0), rmse


def clt_empirical_test(spec: ProcessSpec, n: int, replicas: int = 5000, seed: int = 0,
                       grid: PeriodicGrid | None = None, pilot: int = 20_000, limit_factor: int = 10,
                       threshold: float = 0.05, threads: int = 1, keep_samples: bool = False) -> dict:
    """Two-sample KS distance between sup|zeta_n| and sup|Gaussian limit|.

    The limit uses the empirical covariance of an independent pilot
    ensemble of the base process and ``limit_factor * replicas`` draws.
    """
    grid = grid or PeriodicGrid(256)
    zeta = normalized_sum(spec, n, replicas, grid, seed, threads)
    base = sample(spec, grid, pilot, seed, threads, tag=TAG_PILOT)
    cov = empirical_covariance(base)
    limit_sups = GaussianLimitSampler(cov).sup_norms(limit_factor * replicas, seed, threads)
    zeta_sups = zeta.sup_norms()
    if np.all(zeta_sups == 0) and np.all(limit_sups == 0):
        distance = 0.0
    else:
        distance = float(stats.ks_2samp(zeta_sups, limit_sups).statistic)
    out = {
        "n": n,
        "replicas": replicas,
        "limit_replicas": limit_factor * replicas,
        "pilot": pilot,
        "ks_distance": distance,
        "threshold": threshold,
        "pass": bool(distance < threshold),
    }
    if keep_samples:
        out["sup_samples"] = (zeta_sups, limit_sups)
    return out
