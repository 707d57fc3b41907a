"""Monte-Carlo estimates of the block functional Psi and the series of U terms.

For a path ensemble and a degree sequence n(1) = 1 < n(2) < ..., block k is
``Z_k = V_{n(k+1)} - V_{n(k)}`` applied to every path, and

    Psi_k(lam) = mean over t of E exp(lam * Z_k(t))
    U_k        = inf_{lam > 0} (log n(k+1) + log Psi_k(lam)) / lam

Summability of U_k (uniformly over a family) is the checkable hypothesis
for continuity and tightness. Everything here reports *trends*: a finite
computation cannot decide convergence of an infinite series.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .approximation import DyadicSequence, PeriodicGrid, block_components
from .processes import (
    PathEnsemble,
    ProcessSpec,
    analytic_covariance,
    normalized_sum,
)

LAMBDA_MIN = 1e-3
LAMBDA_MAX = 1e3
LAMBDA_POINTS = 61
EXP_GUARD = 700.0
GUARD_FRACTION = 0.01
GOLDEN_ITERATIONS = 40

CONVERGING = "converging-trend"
DIVERGING = "diverging-trend"
INCONCLUSIVE = "inconclusive"


def default_lambda_grid() -> np.ndarray:
    return np.geomspace(LAMBDA_MIN, LAMBDA_MAX, LAMBDA_POINTS)


@dataclass
class LogPsi:
    lambdas: np.ndarray
    log_psi: np.ndarray
    std_err: np.ndarray
    guard_fraction: np.ndarray


def log_psi_values(values: np.ndarray, lambdas) -> LogPsi:
    """log of mean(exp(lam * values)) over every entry, for each lam > 0.

    Rows are independent realizations; the standard error is the delta-method
    error of the log of the mean of per-row averages. Exponentials are shifted
    by lam * max(values) so nothing overflows.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
    if np.any(lambdas <= 0):
        raise ValueError("lambda must be positive")
    rows, cols = values.shape
    top = float(values.max())
    sums = kernels.row_exp_sums(values, lambdas, top) / cols
    mean = sums.mean(axis=0)
    log_psi = lambdas * top + np.log(mean)
    if rows > 1:
        std_err = sums.std(axis=0, ddof=1) / (math.sqrt(rows) * mean)
    else:
        std_err = np.zeros_like(mean)
    flat = np.sort(values, axis=None)
    above = flat.size - np.searchsorted(flat, EXP_GUARD / lambdas, side="right")
    return LogPsi(lambdas, log_psi, std_err, above / flat.size)


def psi_estimate(ens: PathEnsemble, seq: DyadicSequence, k: int, lam: float):
    """``(log Psi_k(lam), std_err, warnings)`` for one block and one lambda."""
    z = _block(ens, seq, k)
    res = log_psi_values(z, [lam])
    warnings = _guard_warnings(res.guard_fraction[0], lam)
    return float(res.log_psi[0]), float(res.std_err[0]), warnings


def _guard_warnings(fraction: float, lam: float) -> list[str]:
    if fraction > GUARD_FRACTION:
        return [f"integrability: {fraction:.2%} of exponents exceed {EXP_GUARD:g} at lambda={lam:.4g}"]
    return []


def _block(ens: PathEnsemble, seq: DyadicSequence, k: int) -> np.ndarray:
    if ens.grid is None:
        raise ValueError("block statistics need an ensemble on a periodic grid")
    return block_components(ens.paths, seq, k, ens.grid)


@dataclass
class BlockStatistic:
    k: int
    n_lo: int
    n_hi: int
    lambda_star: float
    U: float
    mc_error: float
    psi_curve: list = field(default_factory=list, repr=False)
    E_sup_Zk: float = float("nan")
    ratio: float = float("nan")
    vanishing: bool = False
    warnings: list = field(default_factory=list)

    @property
    def U_std_err(self) -> float:
        return self.mc_error / self.lambda_star

    def to_dict(self, with_curve: bool = False) -> dict:
        d = asdict(self)
        if not with_curve:
            d.pop("psi_curve")
        return d


def _objective(z: np.ndarray, log_n: float, lambdas: np.ndarray):
    res = log_psi_values(z, lambdas)
    return (log_n + res.log_psi) / lambdas, res


def u_term_values(z: np.ndarray, n_hi: int, lambda_grid=None) -> tuple[float, float, float, list, list]:
    """Minimise ``(log n_hi + log Psi(lam)) / lam`` for a block matrix ``z``.

    Geometric grid search followed by one golden-section pass (in log lambda)
    between the neighbours of the grid minimiser. Returns
    ``(U, lambda_star, std_err_of_log_psi, curve, warnings)``.
    """
    grid = default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, dtype=np.float64)
    log_n = math.log(n_hi)
    obj, res = _objective(z, log_n, grid)
    i = int(np.argmin(obj))
    best_lam, best_val, best_se = grid[i], obj[i], res.std_err[i]
    warnings = []
    if i == len(grid) - 1:
        warnings.append("cap-active: objective still decreasing at lambda_max")
    if i == 0:
        warnings.append("floor-active: minimum at lambda_min")
    lo = math.log(grid[max(i - 1, 0)])
    hi = math.log(grid[min(i + 1, len(grid) - 1)])
    if hi > lo:
        golden = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = lo, hi
        c, d = b - golden * (b - a), a + golden * (b - a)
        fc = _objective(z, log_n, np.array([math.exp(c)]))
        fd = _objective(z, log_n, np.array([math.exp(d)]))
        for _ in range(GOLDEN_ITERATIONS):
            if fc[0][0] <= fd[0][0]:
                b, d, fd = d, c, fc
                c = b - golden * (b - a)
                fc = _objective(z, log_n, np.array([math.exp(c)]))
            else:
                a, c, fc = c, d, fd
                d = a + golden * (b - a)
                fd = _objective(z, log_n, np.array([math.exp(d)]))
        for x, f in ((c, fc), (d, fd)):
            if f[0][0] < best_val:
                best_lam, best_val, best_se = math.exp(x), f[0][0], f[1].std_err[0]
    warnings += _guard_warnings(float(res.guard_fraction[i]), float(grid[i]))
    curve = [[float(l), float(v)] for l, v in zip(grid, res.log_psi)]
    if best_val < 0.0:
        warnings.append(f"negative objective {best_val:.3e} clamped to 0")
        best_val = 0.0
    return float(best_val), float(best_lam), float(best_se), curve, warnings


def u_term(ens: PathEnsemble, seq: DyadicSequence, k: int, lambda_grid=None) -> BlockStatistic:
    z = _block(ens, seq, k)
    U, lam, se, curve, warnings = u_term_values(z, seq[k + 1], lambda_grid)
    return BlockStatistic(k, seq[k], seq[k + 1], lam, U, se, curve, warnings=warnings)


@dataclass
class CriterionReport:
    sequence: tuple
    blocks: list
    tail_sums: list
    verdict: str

    def to_dict(self, with_curves: bool = False) -> dict:
        return {
            "sequence": list(self.sequence),
            "blocks": [b.to_dict(with_curves) for b in self.blocks],
            "tail_sums": list(self.tail_sums),
            "verdict": self.verdict,
        }


def tail_sums(terms) -> np.ndarray:
    """``sum_{k >= m} terms_k`` for every m; nonincreasing when terms are nonnegative."""
    return np.cumsum(np.asarray(terms, dtype=np.float64)[::-1])[::-1]


def trend_verdict(terms, decrease_window: int = 3, final_fraction: float = 0.1) -> str:
    """Verdict from the nonnegative series ``terms``.

    converging-trend: the last ``decrease_window`` tail sums strictly
    decrease and the final tail is below ``final_fraction`` of the full sum.
    diverging-trend: the last ``decrease_window`` terms do not decrease.
    inconclusive otherwise.
    """
    terms = np.asarray(terms, dtype=np.float64)
    tails = tail_sums(terms)
    if tails.size == 0 or tails[0] == 0.0 or terms[-1] == 0.0:
        # trailing vanishing blocks: the computed series terminates
        return CONVERGING
    last = tails[-decrease_window:]
    if len(last) == decrease_window and np.all(np.diff(last) < 0) and tails[-1] < final_fraction * tails[0]:
        return CONVERGING
    recent = terms[-decrease_window:]
    if len(recent) == decrease_window and np.all(np.diff(recent) >= 0):
        return DIVERGING
    return INCONCLUSIVE


def series_check(ens: PathEnsemble, seq: DyadicSequence | None = None, lambda_grid=None,
                 vanish_tol: float = 1e-12) -> CriterionReport:
    """U_k, tails and the ``E||Z_k|| / U_k`` diagnostic for every block.

    Blocks whose ``Z_k`` vanishes (sup below ``vanish_tol`` times the largest
    path value) keep their cap-floor U in the report but count as zero terms
    for the verdict.
    """
    if ens.grid is None:
        raise ValueError("series_check needs an ensemble on a periodic grid")
    seq = seq or DyadicSequence.for_grid(ens.grid)
    if seq.block_count < 3:
        raise ValueError("need at least 3 blocks")
    scale = max(float(np.max(np.abs(ens.paths))), 1e-300)
    blocks = []
    for k in range(1, seq.block_count + 1):
        z = _block(ens, seq, k)
        U, lam, se, curve, warnings = u_term_values(z, seq[k + 1], lambda_grid)
        e_sup = float(np.mean(np.max(np.abs(z), axis=1)))
        stat = BlockStatistic(k, seq[k], seq[k + 1], lam, U, se, curve, e_sup,
                              e_sup / U if U > 0 else float("inf"), warnings=warnings)
        stat.vanishing = bool(np.max(np.abs(z)) <= vanish_tol * scale)
        blocks.append(stat)
    terms = [0.0 if b.vanishing else b.U for b in blocks]
    return CriterionReport(seq.terms, blocks, tail_sums([b.U for b in blocks]).tolist(), trend_verdict(terms))


def equiconvergence_check(spec: ProcessSpec, seq: DyadicSequence | None = None, n_list=(1, 4, 16, 64),
                          count: int = 2000, grid: PeriodicGrid | None = None, master_seed: int = 0,
                          threads: int = 1, lambda_grid=None) -> dict:
    """Series check for ``zeta_n`` at every n in ``n_list`` plus the sup over n of each tail.

    ``zeta_n`` is simulated directly, which realises the n-fold generating
    functional exactly in distribution.
    """
    grid = grid or PeriodicGrid(256)
    seq = seq or DyadicSequence.for_grid(grid)
    try:
        ref_var = np.diag(analytic_covariance(spec, grid).entries)
    except ValueError:
        ref_var = None
    per_n = {}
    tails = []
    effective = []
    var_dev = []
    for n in n_list:
        ens = normalized_sum(spec, n, count, grid, master_seed, threads)
        report = series_check(ens, seq, lambda_grid)
        per_n[str(n)] = report.to_dict()
        tails.append(report.tail_sums)
        effective.append([0.0 if b.vanishing else b.U for b in report.blocks])
        var = ens.paths.var(axis=0, ddof=1)
        if ref_var is None:
            ref_var = var
        denom = max(float(np.max(ref_var)), 1e-300)
        var_dev.append(float(np.max(np.abs(var - ref_var)) / denom))
    sup_tails = np.max(np.array(tails), axis=0)
    sup_terms = np.max(np.array(effective), axis=0)
    return {
        "sequence": list(seq.terms),
        "n_list": list(n_list),
        "realizations": count,
        "per_n": per_n,
        "sup_tail_sums": sup_tails.tolist(),
        "verdict": trend_verdict(sup_terms),
        "variance_relative_deviation": dict(zip(map(str, n_list), var_dev)),
    }


@dataclass
class DecayResult:
    value: float
    verdict: str
    m_tilde: float
    m_prime: float
    decay_exponent: float
    increment_ratio: float
    r_max: int
    partial_sums: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {k: v for k, v in vars(self).items() if k != "partial_sums"}


def log_power_delta(m: float, Delta: float, C: float = 1.0):
    """``delta(n) = C [log(n + 2)]^-(1/m' + Delta)`` with m' the conjugate of min(m, 2)."""
    m_tilde = min(m, 2.0)
    m_prime = m_tilde / (m_tilde - 1.0)
    power = 1.0 / m_prime + Delta

    def delta(n):
        return C * math.log(n + 2) ** (-power)

    return delta


def decay_series_check(delta, m: float, r_max: int = 10_000, margin: float = 0.02,
                       fit_from: float = 0.1) -> DecayResult:
    """Partial sum of ``delta(2^r) / r^(1/min(m,2))`` for r = 1..r_max, with a trend verdict.

    ``delta`` is a callable on (possibly huge) Python ints or an array indexed
    by n. The verdict uses the power-law decay exponent of the terms fitted
    on r in [fit_from * r_max, r_max] (integral test): converging-trend
    iff the exponent exceeds ``1 + margin``. The last-quarter increment ratio
    is reported alongside as a diagnostic.
    """
    if m <= 1:
        raise ValueError("m must exceed 1")
    m_tilde = min(m, 2.0)
    m_prime = m_tilde / (m_tilde - 1.0)
    if callable(delta):
        def at(r):
            return float(delta(1 << r))
    else:
        arr = np.asarray(delta, dtype=np.float64)
        if np.any(np.diff(arr) > 0):
            raise ValueError("delta must be nonincreasing")
        r_max = min(r_max, int(math.floor(math.log2(len(arr) - 1))))

        def at(r):
            return float(arr[1 << r])
    r = np.arange(1, r_max + 1)
    d = np.array([at(int(x)) for x in r])
    if np.any(d < 0):
        raise ValueError("delta must be nonnegative")
    if np.any(np.diff(d) > 0):
        raise ValueError("delta must be nonincreasing")
    terms = d / r ** (1.0 / m_tilde)
    partial = np.cumsum(terms)
    total = float(partial[-1])
    q = int(0.75 * r_max)
    increment = total - (float(partial[q - 1]) if q >= 1 else 0.0)
    inc_ratio = increment / total if total > 0 else 0.0
    start = max(1, int(fit_from * r_max))
    tail_r, tail_t = r[start - 1:], terms[start - 1:]
    if np.all(tail_t == 0):
        exponent, verdict = float("inf"), CONVERGING
    elif np.any(tail_t == 0) or len(tail_r) < 2:
        exponent, verdict = float("inf"), CONVERGING
    else:
        exponent = float(-np.polyfit(np.log(tail_r), np.log(tail_t), 1)[0])
        verdict = CONVERGING if exponent > 1.0 + margin else DIVERGING
    return DecayResult(total, verdict, m_tilde, m_prime, exponent, inc_ratio, int(r_max), partial)
