"""Random-process samplers and ensemble statistics.

Seeding contract: realizations are produced in fixed blocks of
``BLOCK_SIZE`` rows. Block ``b`` of a stream tagged ``tag`` draws from
``SeedSequence(master_seed, spawn_key=(tag, b))``, so the output does not
depend on how many worker threads evaluate the blocks or in which order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .approximation import PeriodicGrid

BLOCK_SIZE = 256

# stream tags; distinct tags give statistically independent streams
TAG_PATHS = 0
TAG_PILOT = 1
TAG_LIMIT = 2
TAG_INTEGRAND = 3
TAG_REFERENCE = 4

ETA0_T_MAX = math.exp(-4.0)


def block_rng(master_seed: int, tag: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(tag), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def run_blocks(fn, count: int, master_seed: int, tag: int, threads: int = 1) -> list:
    """Call ``fn(rng, rows)`` for every block and return results in block order."""
    sizes = [min(BLOCK_SIZE, count - start) for start in range(0, count, BLOCK_SIZE)]

    def job(b):
        return fn(block_rng(master_seed, tag, b), sizes[b])

    if threads <= 1 or len(sizes) <= 1:
        return [job(b) for b in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, range(len(sizes))))


@dataclass(frozen=True)
class PathEnsemble:
    """R x N matrix of independent realizations on ``nodes``.

    ``grid`` is set when the nodes are a :class:`PeriodicGrid`.
    """

    nodes: np.ndarray
    paths: np.ndarray
    master_seed: int | None = None
    grid: PeriodicGrid | None = None

    def __post_init__(self):
        paths = np.asarray(self.paths, dtype=np.float64)
        if paths.ndim != 2 or paths.shape[1] != len(self.nodes):
            raise ValueError("paths must be an R x len(nodes) matrix")
        paths.setflags(write=False)
        object.__setattr__(self, "paths", paths)

    @property
    def count(self) -> int:
        return self.paths.shape[0]

    def scaled(self, c: float) -> "PathEnsemble":
        return PathEnsemble(self.nodes, self.paths * c, self.master_seed, self.grid)

    def sup_norms(self) -> np.ndarray:
        return np.max(np.abs(self.paths), axis=1)


# ---------------------------------------------------------------- process kinds


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ValueError(f"{field_name}: {message}")


@dataclass(frozen=True)
class ProcessSpec:
    """A process family plus its parameters.

    kinds and parameters:
      * ``wiener``: none (paths start at 0 on the grid nodes)
      * ``eta0``: ``delta`` in (0, 1/4), ``node_count``, ``t_min``
      * ``random_trig``: ``max_degree``, ``min_degree`` (1), ``law``
        (normal | rademacher | uniform), ``decay`` (scale k**-decay) or ``scales``
      * ``sequence_example``: ``alpha``, ``p0``, ``n_max``
      * ``user_table``: ``path`` to a CSV of realizations (rows) with a header
        of node positions; resampled with replacement after centering
      * ``zero``: the identically zero process
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))
        validate_spec(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ProcessSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        _require(kind is not None, "process.kind", "missing")
        return cls(kind, d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


_DEFAULTS = {
    "zero": {},
    "wiener": {},
    "eta0": {"delta": 0.1, "node_count": 512, "t_min": 1e-300},
    "random_trig": {"max_degree": 8, "min_degree": 1, "law": "normal", "decay": 1.0, "scales": None},
    "sequence_example": {"alpha": 0.5, "p0": 1.5, "n_max": 64},
    "user_table": {"path": None},
}


def validate_spec(spec: ProcessSpec) -> None:
    kind = spec.kind
    _require(kind in _DEFAULTS, "process.kind", f"unknown kind {kind!r}, expected one of {sorted(_DEFAULTS)}")
    allowed = _DEFAULTS[kind]
    for key in spec.params:
        _require(key in allowed, f"process.{key}", f"unknown parameter for kind {kind!r}")
    for key, value in allowed.items():
        spec.params.setdefault(key, value)
    p = spec.params
    if kind == "eta0":
        _require(0.0 < p["delta"] < 0.25, "process.delta", f"must lie in (0, 1/4), got {p['delta']}")
        _require(int(p["node_count"]) >= 2, "process.node_count", "must be >= 2")
        _require(0.0 < p["t_min"] < ETA0_T_MAX, "process.t_min", "must lie in (0, e^-4)")
    elif kind == "random_trig":
        _require(int(p["max_degree"]) >= 1, "process.max_degree", "must be >= 1")
        _require(1 <= int(p["min_degree"]) <= int(p["max_degree"]), "process.min_degree", "must lie in 1..max_degree")
        _require(p["law"] in ("normal", "rademacher", "uniform"), "process.law", f"unknown law {p['law']!r}")
        if p["scales"] is not None:
            width = int(p["max_degree"]) - int(p["min_degree"]) + 1
            _require(len(p["scales"]) == width, "process.scales", f"need {width} entries")
    elif kind == "sequence_example":
        p0, alpha = p["p0"], p["alpha"]
        _require(1.0 < p0 < 2.0, "process.p0", f"must lie in (1, 2), got {p0}")
        bound = min(1.0, p0 / (2.0 - p0))
        _require(0.0 < alpha < bound, "process.alpha", f"must lie in (0, {bound:g}), got {alpha}")
        _require(int(p["n_max"]) >= 1, "process.n_max", "must be >= 1")
    elif kind == "user_table":
        _require(p["path"] is not None, "process.path", "required for user_table")


def trig_scales(spec: ProcessSpec) -> tuple[np.ndarray, np.ndarray]:
    """Frequencies and coefficient scales of a ``random_trig`` spec."""
    p = spec.params
    freqs = np.arange(int(p["min_degree"]), int(p["max_degree"]) + 1)
    if p["scales"] is not None:
        scales = np.asarray(p["scales"], dtype=np.float64)
    else:
        scales = freqs.astype(np.float64) ** (-float(p["decay"]))
    return freqs, scales


def _unit_law(rng: np.random.Generator, law: str, shape) -> np.ndarray:
    if law == "normal":
        return rng.standard_normal(shape)
    if law == "rademacher":
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=shape)


_SUM_CHUNK = 256


def _chunked_sum(draw_one, rng, count, n_sum):
    """n_sum**-0.5 times the sum of n_sum draws, drawn in chunks of copies."""
    acc = None
    for start in range(0, n_sum, _SUM_CHUNK):
        m = min(_SUM_CHUNK, n_sum - start)
        part = draw_one(rng, count, m)
        acc = part if acc is None else acc + part
    return acc / math.sqrt(n_sum)


def eta0_nodes(node_count: int, t_min: float) -> np.ndarray:
    """0 followed by ``node_count`` log-spaced points of [t_min, e^-4]."""
    return np.concatenate([[0.0], np.geomspace(t_min, ETA0_T_MAX, int(node_count))])


def eta0_scale(t: np.ndarray, delta: float) -> np.ndarray:
    """Divisor sqrt(2t) (log|log t|)^(1/2 + delta/2); infinite at t = 0."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        loglog = np.log(np.abs(np.log(t)))
        scale = np.sqrt(2.0 * t) * loglog ** (0.5 + delta / 2.0)
    return np.where(t == 0.0, np.inf, scale)


def sequence_example_coords(n_max: int) -> np.ndarray:
    """Point ``n`` of T = {1, 2, ..., inf} placed at 1/n (inf at 0), so |x - y| is the metric d."""
    return np.concatenate([1.0 / np.arange(1, n_max + 1), [0.0]])


def sequence_example_draw(rng: np.random.Generator, count: int, alpha: float, p0: float):
    """One sample of the whole sequence per row, in sparse form.

    Only the coordinate ``n`` with ``a(n) < x < a(n+1)`` is nonzero.
    Returns ``(index, value)`` with index 0 when every coordinate vanishes
    (x <= a(1) = 1/2).
    """
    v = rng.random(count)  # 1 - x
    signs = rng.integers(0, 2, size=count) * 2.0 - 1.0
    active = (v < 0.5) & (v > 0.0)
    safe_v = np.where(active, v, 0.25)
    n = np.floor((0.5 / safe_v) ** (1.0 / alpha))
    n = np.maximum(n, 1.0)
    upper = 0.5 * n ** (-alpha)  # 1 - a(n)
    lower = 0.5 * (n + 1.0) ** (-alpha)  # 1 - a(n+1)
    y = (upper - safe_v) / (upper - lower)
    y = np.clip(y, np.finfo(float).tiny, 1.0)
    value = n ** (alpha / p0) * signs * np.sqrt(np.abs(np.log(y)))
    index = np.where(active, n, 0.0)
    return index, np.where(active, value, 0.0)


def _load_table(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    nodes = np.array([float(x) for x in rows[0]])
    data = np.array([[float(x) for x in r] for r in rows[1:] if r])
    if data.ndim != 2 or data.shape[1] != len(nodes):
        raise ValueError(f"{path}: every row must have {len(nodes)} values")
    return nodes, data


def _grid_matching(nodes: np.ndarray) -> PeriodicGrid | None:
    n = len(nodes)
    if n >= 4 and n % 2 == 0 and np.allclose(nodes, 2 * np.pi * np.arange(n) / n, atol=1e-12):
        return PeriodicGrid(n)
    return None


class _Sampler:
    """Resolved sampler: node positions plus a block draw function."""

    def __init__(self, spec: ProcessSpec, grid: PeriodicGrid | None):
        self.spec = spec
        p = spec.params
        kind = spec.kind
        self.grid = None
        if kind in ("zero", "wiener", "random_trig"):
            self.grid = grid or PeriodicGrid()
            self.nodes = self.grid.nodes
        elif kind == "eta0":
            self.nodes = eta0_nodes(p["node_count"], p["t_min"])
        elif kind == "sequence_example":
            self.nodes = sequence_example_coords(int(p["n_max"]))
        else:
            self.nodes, table = _load_table(p["path"])
            self.table = table - table.mean(axis=0)
            self.grid = _grid_matching(self.nodes)
        self._draw_one = getattr(self, "_draw_" + kind)

    def draw(self, rng, count, n_sum):
        if self.spec.kind == "zero":
            return np.zeros((count, len(self.nodes)))
        return _chunked_sum(self._draw_one, rng, count, n_sum)

    # each _draw_<kind>(rng, count, m) returns the plain sum of m copies

    def _draw_zero(self, rng, count, m):
        return np.zeros((count, len(self.nodes)))

    def _draw_wiener(self, rng, count, m):
        steps = np.diff(self.nodes)
        inc = rng.standard_normal((count, m, len(steps))).sum(axis=1) * np.sqrt(steps)
        return np.concatenate([np.zeros((count, 1)), np.cumsum(inc, axis=1)], axis=1)

    def _draw_eta0(self, rng, count, m):
        t = self.nodes
        steps = np.diff(t)
        inc = rng.standard_normal((count, m, len(steps))).sum(axis=1) * np.sqrt(steps)
        w = np.concatenate([np.zeros((count, 1)), np.cumsum(inc, axis=1)], axis=1)
        scale = eta0_scale(t, self.spec.params["delta"])
        out = np.zeros_like(w)
        out[:, 1:] = w[:, 1:] / scale[1:]
        return out

    def _draw_random_trig(self, rng, count, m):
        freqs, scales = trig_scales(self.spec)
        coef = _unit_law(rng, self.spec.params["law"], (count, m, 2, len(freqs))).sum(axis=1)
        phase = np.outer(freqs, self.nodes)
        return (coef[:, 0] * scales) @ np.cos(phase) + (coef[:, 1] * scales) @ np.sin(phase)

    def _draw_sequence_example(self, rng, count, m):
        p = self.spec.params
        n_max = int(p["n_max"])
        out = np.zeros((count, n_max + 1))
        rows = np.arange(count)
        for _ in range(m):
            index, value = sequence_example_draw(rng, count, p["alpha"], p["p0"])
            keep = (index >= 1) & (index <= n_max)
            np.add.at(out, (rows[keep], index[keep].astype(np.int64) - 1), value[keep])
        return out

    def _draw_user_table(self, rng, count, m):
        picks = rng.integers(0, self.table.shape[0], size=(count, m))
        return self.table[picks].sum(axis=1)


def sample(spec: ProcessSpec, grid: PeriodicGrid | None = None, count: int = 1000,
           master_seed: int = 0, threads: int = 1, tag: int = TAG_PATHS) -> PathEnsemble:
    """``count`` independent realizations of ``spec``.

    ``grid`` applies to the periodic kinds; eta0 and the sequence example
    carry their own node sets.
    """
    return normalized_sum(spec, 1, count, grid, master_seed, threads, tag)


def normalized_sum(spec: ProcessSpec, n: int, count: int, grid: PeriodicGrid | None = None,
                   master_seed: int = 0, threads: int = 1, tag: int = TAG_PATHS) -> PathEnsemble:
    """Realizations of ``n**-0.5 * (eta_1 + ... + eta_n)`` from fresh independent copies.

    With ``n = 1`` this reproduces :func:`sample` bit for bit.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    sampler = _Sampler(spec, grid)
    parts = run_blocks(lambda rng, rows: sampler.draw(rng, rows, n), count, master_seed, tag, threads)
    return PathEnsemble(sampler.nodes, np.vstack(parts), master_seed, sampler.grid)


def process_nodes(spec: ProcessSpec, grid: PeriodicGrid | None = None) -> np.ndarray:
    return _Sampler(spec, grid).nodes


# ---------------------------------------------------------------- covariance


@dataclass(frozen=True)
class CovarianceMatrix:
    nodes: np.ndarray
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.shape != (len(self.nodes), len(self.nodes)):
            raise ValueError("covariance must be len(nodes) x len(nodes)")
        object.__setattr__(self, "entries", 0.5 * (e + e.T))

    def psd_defect(self) -> float:
        """Most negative eigenvalue relative to the spectral norm (0 when PSD)."""
        w = np.linalg.eigvalsh(self.entries)
        scale = max(np.max(np.abs(w)), 1e-300)
        return float(max(0.0, -w.min()) / scale)

    def is_psd(self, tol: float = 1e-8) -> bool:
        return self.psd_defect() <= tol


def empirical_covariance(ens: PathEnsemble) -> CovarianceMatrix:
    if ens.count < 2:
        raise ValueError("need at least 2 realizations for a covariance")
    centered = ens.paths - ens.paths.mean(axis=0)
    return CovarianceMatrix(ens.nodes, centered.T @ centered / (ens.count - 1))


def analytic_covariance(spec: ProcessSpec, grid: PeriodicGrid | None = None) -> CovarianceMatrix:
    """Exact covariance for zero, wiener, eta0 and random_trig."""
    nodes = process_nodes(spec, grid)
    p = spec.params
    if spec.kind == "zero":
        entries = np.zeros((len(nodes), len(nodes)))
    elif spec.kind == "wiener":
        entries = np.minimum.outer(nodes, nodes)
    elif spec.kind == "random_trig":
        freqs, scales = trig_scales(spec)
        diff = np.subtract.outer(nodes, nodes)
        entries = sum(s * s * np.cos(k * diff) for k, s in zip(freqs, scales))
    elif spec.kind == "eta0":
        scale = eta0_scale(nodes, p["delta"])
        with np.errstate(divide="ignore", invalid="ignore"):
            entries = np.minimum.outer(nodes, nodes) / np.outer(scale, scale)
        entries[0, :] = 0.0
        entries[:, 0] = 0.0
    else:
        raise ValueError(f"no closed-form covariance for kind {spec.kind!r}")
    return CovarianceMatrix(nodes, entries)


@dataclass(frozen=True)
class TauDistance:
    dist: np.ndarray
    clamped: int


def tau_distance(cov: CovarianceMatrix) -> TauDistance:
    """``sqrt(Var(eta(t) - eta(s)))``; negative radicands from noise are set to 0 and counted."""
    r = cov.entries
    d = np.diag(r)
    sq = d[:, None] + d[None, :] - 2.0 * r
    np.fill_diagonal(sq, 0.0)
    clamped = int(np.count_nonzero(sq < 0.0))
    return TauDistance(np.sqrt(np.maximum(sq, 0.0)), clamped)


def eta0_tau(delta: float, u: np.ndarray) -> np.ndarray:
    """Exact tau-distance matrix of eta0 at the points t = exp(-u), plus t = 0 where u = inf.

    Works in the coordinate u = log(1/t) so nodes far below the float range
    of t are allowed. Uses Var eta0(t) = 1/(2 (log u)^(1+delta)) and
    Cov = sqrt(s/t) / (2 ((log u_t)(log u_s))^((1+delta)/2)) for s < t.
    """
    u = np.asarray(u, dtype=np.float64)
    finite = np.isfinite(u)
    logu = np.log(np.where(finite, u, np.e))
    var = np.where(finite, 0.5 * logu ** (-(1.0 + delta)), 0.0)
    amp = np.where(finite, logu ** (-(1.0 + delta) / 2.0), 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        gap = np.abs(np.subtract.outer(np.where(finite, u, 0.0), np.where(finite, u, 0.0)))
        corr = np.exp(-0.5 * gap)
    cross = 0.5 * corr * np.outer(amp, amp)
    sq = var[:, None] + var[None, :] - 2.0 * cross
    np.fill_diagonal(sq, 0.0)
    return np.sqrt(np.maximum(sq, 0.0))


# ---------------------------------------------------------------- factorization


@dataclass(frozen=True)
class FactorizationPair:
    """``|eta(t) - eta(s)| <= L * q(t, s)`` on every sampled path.

    ``q`` is the max over sampled paths, standing in for the essential sup;
    ``realizations`` records how many paths it is based on.
    """

    L_samples: np.ndarray
    q: np.ndarray
    trivial: bool
    realizations: int


def factorization_pair(ens: PathEnsemble) -> FactorizationPair:
    if ens.count < 1:
        raise ValueError("empty ensemble")
    spans = ens.paths.max(axis=1) - ens.paths.min(axis=1)
    q = kernels.increment_ratio_max(ens.paths, spans)
    return FactorizationPair(spans, q, bool(np.all(spans == 0.0)), ens.count)


# ---------------------------------------------------------------- sequence example


def sequence_a(n, alpha: float):
    return 1.0 - 0.5 * np.asarray(n, dtype=np.float64) ** (-alpha)


def sequence_second_moment(n, alpha: float, p0: float):
    """Exact E|eta_n|^2 = c(n)^2 Delta(n) E|log Y| with E|log Y| = 1."""
    n = np.asarray(n, dtype=np.float64)
    delta = sequence_a(n + 1, alpha) - sequence_a(n, alpha)
    return n ** (2.0 * alpha / p0) * delta


def _loglog_fit(x, y):
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def running_mean_trend(values: np.ndarray, doublings: int = 4, stable_slope: float = 0.1,
                       growth_slope: float = 0.3) -> dict:
    """Log-log slope of prefix means over the last ``doublings`` doublings of the sample size.

    ``stabilizing`` when |slope| < stable_slope, ``growing`` when
    slope > growth_slope, ``inconclusive`` otherwise.
    """
    total = len(values)
    sizes = [total // 2**j for j in range(doublings, -1, -1)]
    prefix = np.cumsum(values)
    means = np.array([prefix[s - 1] / s for s in sizes])
    running_max = np.maximum.accumulate(means)
    new_highs = int(np.count_nonzero(np.diff(running_max) > 0))
    slope = float(np.polyfit(np.log(sizes), np.log(np.maximum(means, 1e-300)), 1)[0])
    if abs(slope) < stable_slope:
        trend = "stabilizing"
    elif slope > growth_slope:
        trend = "growing"
    else:
        trend = "inconclusive"
    return {"sizes": sizes, "running_means": means.tolist(), "slope": slope,
            "new_highs": new_highs, "trend": trend}


def sequence_example_moments(alpha: float = 0.5, p0: float = 1.5, n_max: int = 64,
                             count: int = 1_000_000, master_seed: int = 0,
                             p_grid=(1.2, 1.5, 3.0), threads: int = 1) -> dict:
    """Moment diagnostics for the sparse sequence process.

    The sup norm is over all of T (not truncated at ``n_max``); per-n
    second moments are reported for ``n <= n_max``.
    """
    validate_spec(ProcessSpec("sequence_example", {"alpha": alpha, "p0": p0, "n_max": n_max}))
    parts = run_blocks(lambda rng, rows: np.stack(sequence_example_draw(rng, rows, alpha, p0)),
                       count, master_seed, TAG_PATHS, threads)
    index, value = np.hstack(parts)
    ns = np.arange(1, n_max + 1)
    in_range = (index >= 1) & (index <= n_max)
    idx = index[in_range].astype(np.int64) - 1
    second = np.bincount(idx, weights=value[in_range] ** 2, minlength=n_max) / count
    first = np.bincount(idx, weights=value[in_range], minlength=n_max) / count
    hits = np.bincount(idx, minlength=n_max)
    usable = second > 0
    slope, intercept, r2 = _loglog_fit(ns[usable], second[usable])
    norms = np.abs(value)
    return {
        "alpha": alpha,
        "p0": p0,
        "n_max": n_max,
        "realizations": count,
        "n": ns.tolist(),
        "second_moment": second.tolist(),
        "second_moment_exact": sequence_second_moment(ns, alpha, p0).tolist(),
        "mean": first.tolist(),
        "hits": hits.tolist(),
        "decay_fit": {"exponent": slope, "log_constant": intercept, "r2": r2},
        "norm_moments": {str(p): running_mean_trend(norms**p) for p in p_grid},
    }
