"""Covering numbers, metric entropy profiles and the Dudley entropy integral.

All divergence statements are trend verdicts from extrapolation fits; a
finite metric sample always has a finite entropy integral.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import kernels
from .processes import eta0_tau

TRIANGLE_TOL = 1e-9
EXHAUSTIVE_TRIANGLE_LIMIT = 500
SAMPLED_PIVOTS = 200

FINITE = "finite-trend"
DIVERGING = "diverging-trend"


@dataclass(frozen=True)
class MetricSample:
    points: tuple
    dist: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=np.float64)
        n = len(self.points)
        if d.shape != (n, n):
            raise ValueError(f"distance matrix must be {n} x {n}")
        if not np.allclose(d, d.T, atol=TRIANGLE_TOL, rtol=0):
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(d) != 0) or np.any(d < 0):
            raise ValueError("distances must be nonnegative with a zero diagonal")
        violations = triangle_violations(d)
        if violations:
            raise ValueError(f"triangle inequality violated {violations} times (tol {TRIANGLE_TOL:g})")
        object.__setattr__(self, "dist", d)

    @classmethod
    def from_matrix(cls, dist) -> "MetricSample":
        dist = np.asarray(dist, dtype=np.float64)
        return cls(tuple(range(dist.shape[0])), dist)

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.dist.size else 0.0

    def greedy_order(self) -> np.ndarray:
        """Descending eccentricity, ties broken by index."""
        ecc = self.dist.max(axis=1)
        return np.argsort(-ecc, kind="stable")


def triangle_violations(d: np.ndarray, tol: float = TRIANGLE_TOL) -> int:
    """Count of ``d[i,j] > d[i,k] + d[k,j] + tol``.

    Exhaustive up to 500 points; beyond that a fixed pseudo-random set of
    200 pivots ``k`` is checked against all pairs.
    """
    n = d.shape[0]
    if n <= EXHAUSTIVE_TRIANGLE_LIMIT:
        pivots = range(n)
    else:
        pivots = np.random.default_rng(0).choice(n, SAMPLED_PIVOTS, replace=False)
    bad = 0
    for k in pivots:
        bad += int(np.count_nonzero(d > d[:, k, None] + d[None, k, :] + tol))
    return bad


def read_metric_csv(path: str) -> MetricSample:
    """Square distance matrix with a header row of point ids."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    ids = tuple(rows[0])
    return MetricSample(ids, np.array([[float(x) for x in r] for r in rows[1:]]))


@dataclass(frozen=True)
class CoverCount:
    """Greedy cover size and a lower bound on the optimal cover size.

    ``packing`` is a maximal greedy packing at radius 2*eps: its points sit in
    distinct eps-balls of any cover, so packing <= optimal <= greedy.
    """

    greedy: int
    packing: int


def covering_numbers(ms: MetricSample, eps_values) -> list[CoverCount]:
    eps = np.asarray(eps_values, dtype=np.float64)
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    order = ms.greedy_order()
    greedy = kernels.greedy_net_counts(ms.dist, order, eps)
    packing = kernels.greedy_net_counts(ms.dist, order, 2.0 * eps)
    return [CoverCount(int(g), int(p)) for g, p in zip(greedy, packing)]


def covering_number(ms: MetricSample, eps: float) -> CoverCount:
    """Greedy cover by closed eps-balls: repeatedly take the next uncovered point in greedy order."""
    return covering_numbers(ms, [eps])[0]


@dataclass(frozen=True)
class EntropyProfile:
    epsilons: np.ndarray
    H_values: np.ndarray
    N_greedy: np.ndarray
    N_packing: np.ndarray

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "H", "N_greedy", "N_packing"])
            for e, h, g, p in zip(self.epsilons, self.H_values, self.N_greedy, self.N_packing):
                w.writerow([f"{e:.17g}", f"{h:.17g}", int(g), int(p)])


def entropy_profile(ms: MetricSample, eps_grid) -> EntropyProfile:
    """``H(eps) = log N_greedy(eps)`` on a decreasing eps grid."""
    eps = np.asarray(eps_grid, dtype=np.float64)
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps_grid must be strictly decreasing")
    counts = covering_numbers(ms, eps)
    greedy = np.array([c.greedy for c in counts])
    packing = np.array([c.packing for c in counts])
    # greedy counts need not be monotone in eps; the running max keeps H monotone
    greedy = np.maximum.accumulate(greedy)
    return EntropyProfile(eps, np.log(greedy), greedy, packing)


@dataclass
class GrowthFit:
    model: str
    params: dict
    r2: float
    remainder: float


def _linfit(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _fit_polylog(eps, H, eps_min):
    x = np.log(np.log(1.0 / eps))
    b, a, r2 = _linfit(x, np.log(H))
    s = b / 2.0 + 1.0
    L0 = math.log(1.0 / eps_min)
    if s > 0:
        rem = math.exp(a / 2.0) * special.gammaincc(s, L0) * special.gamma(s)
    else:
        rem = math.exp(a / 2.0) * eps_min * L0 ** (b / 2.0)
    return GrowthFit("polylog", {"log_C": a, "power": b}, r2, float(rem))


def _fit_power(eps, H, eps_min):
    b, a, r2 = _linfit(np.log(1.0 / eps), np.log(H))
    rem = math.inf if b >= 2.0 else math.exp(a / 2.0) * eps_min ** (1.0 - b / 2.0) / (1.0 - b / 2.0)
    return GrowthFit("power", {"log_C": a, "exponent": b}, r2, float(rem))


def _fit_exponential(eps, H, eps_min, theta_bounds=(0.2, 2.0)):
    y = np.log(H)

    def neg_r2(theta):
        return -_linfit(eps ** (-theta), y)[2]

    res = optimize.minimize_scalar(neg_r2, bounds=theta_bounds, method="bounded")
    theta = float(res.x)
    B, a, r2 = _linfit(eps ** (-theta), y)
    rem = math.inf if B > 0 else math.sqrt(float(H.max())) * eps_min
    return GrowthFit("exponential", {"log_C": a, "rate": B, "theta": theta}, r2, float(rem))


@dataclass
class DudleyResult:
    integral_estimate: float
    trend: str
    computed: float
    remainder: float
    fits: list
    chosen: str | None

    def to_dict(self) -> dict:
        return {
            "integral_estimate": self.integral_estimate,
            "trend": self.trend,
            "computed": self.computed,
            "remainder": self.remainder,
            "chosen_model": self.chosen,
            "fits": [vars(f) for f in self.fits],
        }


def dudley_check(profile: EntropyProfile, min_decades: float = 2.0, divergence_factor: float = 10.0) -> DudleyResult:
    """Trapezoid value of the integral of sqrt(H) over the sampled part of (0, 1], plus an extrapolated rest.

    Three growth models are fitted to the last decade of eps: polylog
    (log H vs log log 1/eps), power (log H vs log 1/eps) and exponential
    (log H vs eps^-theta, theta in [0.2, 2]). The best R^2 decides the
    extrapolation of the remainder over (0, eps_min). Above the largest
    sampled eps <= 1 the integrand is held at its value there (an upper
    bound). diverging-trend iff the remainder exceeds ``divergence_factor``
    times the computed part.
    """
    eps = np.asarray(profile.epsilons, dtype=np.float64)
    H = np.asarray(profile.H_values, dtype=np.float64)
    if len(eps) < 3 or math.log10(eps.max() / eps.min()) < min_decades - 1e-9:
        raise ValueError(f"profile must span at least {min_decades:g} decades of eps")
    inside = eps <= 1.0
    if not np.any(inside):
        raise ValueError("profile has no eps in (0, 1]")
    e_in, h_in = eps[inside][::-1], H[inside][::-1]  # increasing eps
    root = np.sqrt(h_in)
    computed = float(np.sum(0.5 * (root[1:] + root[:-1]) * np.diff(e_in)))
    computed += float(root[-1] * (1.0 - e_in[-1]))
    eps_min = float(e_in[0])
    window = (eps <= 10.0 * eps_min) & (H > 0) & (eps < 1.0)
    fits = []
    if np.count_nonzero(window) >= 3 and np.ptp(H[window]) > 0:
        ew, hw = eps[window], H[window]
        fits = [_fit_polylog(ew, hw, eps_min), _fit_power(ew, hw, eps_min), _fit_exponential(ew, hw, eps_min)]
        best = max(fits, key=lambda f: f.r2)
        remainder, chosen = best.remainder, best.model
    else:
        # flat or empty tail: H stays at its last value below eps_min
        remainder, chosen = float(math.sqrt(max(H.max(), 0.0)) * eps_min), None
    trend = DIVERGING if remainder > divergence_factor * computed and remainder > 0 else FINITE
    return DudleyResult(computed + remainder, trend, computed, remainder, fits, chosen)


# ---------------------------------------------------------------- example 4.1


def eta0_probe_nodes(node_count: int, u_max: float = 700.0) -> np.ndarray:
    """u = log(1/t) for log-spaced t in [e^-u_max, e^-4], plus u = inf for t = 0."""
    return np.concatenate([[np.inf], np.linspace(4.0, u_max, int(node_count))[::-1]])


def example41_probe(delta: float = 0.1, node_count: int = 1500, u_max: float = 700.0,
                    eps_count: int = 40, decades: float = 2.5) -> dict:
    """Entropy of the eta0 sample space under its exact tau-distance.

    Nodes are t = 0 and ``node_count`` log-spaced points of [e^-u_max, e^-4].
    Besides the profile and Dudley verdict the report has:

    * a fit of log H against eps^-1/(1+delta) (slope, R^2);
    * the volumetric bound exp H >= mu(T) / h_plus(eps) with node weights
      equal to the Lebesgue length of each node's cell;
    * the Lebesgue mass of the tau-ball around t = 0, which shrinks as
      eps -> 0.
    """
    if not 0.0 < delta < 0.25:
        raise ValueError(f"delta: must lie in (0, 1/4), got {delta}")
    u = eta0_probe_nodes(node_count, u_max)
    dist = eta0_tau(delta, u)
    ms = MetricSample.from_matrix(dist)
    diam = ms.diameter
    eps = np.geomspace(diam, diam * 10.0 ** (-decades), eps_count)
    profile = entropy_profile(ms, eps)
    dudley = dudley_check(profile)

    theta = 1.0 / (1.0 + delta)
    H = profile.H_values
    saturated = H >= math.log(len(u)) - 1e-12
    # growth is only visible where the sample still resolves the metric
    resolved = (H > 0) & ~saturated
    slope, intercept, r2 = _linfit(eps[resolved] ** (-theta), np.log(H[resolved]))
    pos = H > 0
    _, _, r2_all = _linfit(eps[pos] ** (-theta), np.log(H[pos]))

    t = np.where(np.isfinite(u), np.exp(-np.where(np.isfinite(u), u, 0.0)), 0.0)
    order = np.argsort(t)
    ts = t[order]
    edges = np.concatenate([[0.0], 0.5 * (ts[1:] + ts[:-1]), [ts[-1]]])
    weights = np.empty_like(t)
    weights[order] = np.diff(edges)
    total = float(weights.sum())
    h_plus, ball0, holds = [], [], []
    for e, n_cover in zip(eps, profile.N_greedy):
        masses = (dist <= e) @ weights
        hp = float(masses.max())
        h_plus.append(hp)
        ball0.append(float(masses[0]))
        holds.append(bool(n_cover * hp >= total * (1.0 - 1e-12)))
    nn = np.where(np.eye(len(u), dtype=bool), np.inf, dist).min(axis=1)
    return {
        "delta": delta,
        "node_count": int(node_count),
        "u_max": u_max,
        "diameter": diam,
        "resolution_floor": float(nn.max()),
        "profile": {"epsilon": eps.tolist(), "H": profile.H_values.tolist(),
                    "N_greedy": profile.N_greedy.tolist(), "N_packing": profile.N_packing.tolist()},
        "dudley": dudley.to_dict(),
        "verdict": dudley.trend,
        "growth_fit": {"theta": theta, "slope": slope, "intercept": intercept, "r2": r2,
                       "points": int(resolved.sum()), "r2_including_saturated": r2_all},
        "saturated_points": int(saturated.sum()),
        "volume_bound": {"mu_T": total, "h_plus": h_plus, "holds": holds, "all_hold": all(holds)},
        "ball_at_zero": {"mass": ball0,
                         "shrinks_as_eps_decreases": bool(np.all(np.diff(ball0) <= 0))},
        "_profile": profile,
    }
