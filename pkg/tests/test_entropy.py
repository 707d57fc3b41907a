import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from vpclt.entropy import (
    DIVERGING,
    FINITE,
    EntropyProfile,
    MetricSample,
    covering_number,
    covering_numbers,
    dudley_check,
    entropy_profile,
    example41_probe,
    read_metric_csv,
    triangle_violations,
)


def line_metric(x):
    x = np.asarray(x, dtype=np.float64)
    return MetricSample.from_matrix(np.abs(np.subtract.outer(x, x)))


def optimal_cover(d, eps):
    """Smallest number of sample-centred closed eps-balls covering every point (exhaustive)."""
    n = len(d)
    within = d <= eps
    for size in range(1, n + 1):
        for centres in itertools.combinations(range(n), size):
            if within[list(centres)].any(axis=0).all():
                return size
    return n


def synthetic_profile(eps, H):
    eps = np.asarray(eps, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    n = np.exp(np.minimum(H, 700.0))  # counts are informational here
    return EntropyProfile(eps, H, n, n)


# ---------------------------------------------------------------- metric samples


def test_rejects_triangle_violation():
    d = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    with pytest.raises(ValueError, match="triangle"):
        MetricSample.from_matrix(d)
    assert triangle_violations(d) == 2


def test_rejects_asymmetric_and_bad_diagonal():
    with pytest.raises(ValueError):
        MetricSample.from_matrix([[0, 1], [2, 0]])
    with pytest.raises(ValueError):
        MetricSample.from_matrix([[1, 1], [1, 0]])


def test_sampled_triangle_check_on_large_input(rng):
    x = rng.random((600, 2))
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    assert triangle_violations(d) == 0


def test_read_metric_csv(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("a,b,c\n0,1,2\n1,0,1\n2,1,0\n")
    ms = read_metric_csv(str(p))
    assert ms.points == ("a", "b", "c") and ms.diameter == 2.0


def test_greedy_order_by_eccentricity():
    ms = line_metric([0.5, 0.0, 1.0, 0.25])
    assert list(ms.greedy_order()) == [1, 2, 3, 0]


# ---------------------------------------------------------------- covering numbers


def test_cover_above_diameter_is_one(rng):
    ms = line_metric(rng.random(30))
    assert covering_number(ms, ms.diameter).greedy == 1
    assert covering_number(ms, 10.0).greedy == 1


def test_interval_quarter():
    ms = line_metric(np.linspace(0, 1, 101))
    c = covering_number(ms, 0.25)
    assert optimal_cover(ms.dist, 0.25) == 2  # two pairs of centres suffice, one does not
    assert c.packing == 2
    assert c.packing <= 2 <= c.greedy


@given(st.integers(0, 2**32 - 1), st.integers(3, 12), st.floats(0.05, 0.6))
def test_bracket_against_exhaustive_optimum(seed, n, eps):
    x = np.random.default_rng(seed).random((n, 2))
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    ms = MetricSample.from_matrix(d)
    c = covering_number(ms, eps)
    opt = optimal_cover(d, eps)
    assert c.packing <= opt <= c.greedy


@given(st.integers(0, 2**32 - 1))
def test_cover_monotone_in_eps(seed):
    ms = line_metric(np.random.default_rng(seed).random(60))
    eps = np.geomspace(1.0, 1e-3, 30)
    counts = [c.greedy for c in covering_numbers(ms, eps)]
    prof = entropy_profile(ms, eps)
    assert np.all(np.diff(prof.H_values) >= 0)
    assert all(p <= g for p, g in zip(prof.N_packing, prof.N_greedy))
    assert counts[0] == 1


def test_cover_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        covering_numbers(line_metric([0, 1]), [0.0])


# ---------------------------------------------------------------- profiles


def test_single_point_profile():
    prof = entropy_profile(MetricSample.from_matrix([[0.0]]), [1.0, 0.1, 0.01])
    assert np.all(prof.H_values == 0)


def test_interval_profile_matches_arithmetic():
    ms = line_metric(np.linspace(0, 1, 2001))
    eps = np.geomspace(0.2, 0.005, 12)
    prof = entropy_profile(ms, eps)
    # optimal cover of [0,1] by intervals of length 2 eps has ceil(1/(2 eps)) members
    assert np.all(np.abs(prof.H_values - np.log(1.0 / (2.0 * eps))) < math.log(2.0) + 0.05)


def test_profile_requires_decreasing_grid():
    with pytest.raises(ValueError):
        entropy_profile(line_metric([0, 1]), [0.1, 0.2])


def test_profile_csv(tmp_path):
    prof = entropy_profile(line_metric(np.linspace(0, 1, 11)), [0.5, 0.05])
    p = tmp_path / "h.csv"
    prof.to_csv(str(p))
    lines = p.read_text().splitlines()
    assert lines[0] == "epsilon,H,N_greedy,N_packing"
    assert float(lines[1].split(",")[0]) == 0.5


# ---------------------------------------------------------------- Dudley


def test_dudley_log_profile():
    eps = np.geomspace(1.0, 1e-6, 300)
    res = dudley_check(synthetic_profile(eps, np.log(1.0 / eps)))
    assert res.integral_estimate == pytest.approx(math.sqrt(math.pi) / 2.0, rel=0.05)
    assert res.trend == FINITE


def test_dudley_power_profile_matches_closed_form():
    eps = np.geomspace(1.0, 1e-4, 200)
    res = dudley_check(synthetic_profile(eps, eps**-1.0))
    exact = integrate.quad(lambda z: z**-0.5, 0, 1)[0]
    assert res.integral_estimate == pytest.approx(exact, rel=0.05)
    assert res.trend == FINITE


def test_dudley_zero_profile():
    res = dudley_check(synthetic_profile(np.geomspace(1.0, 1e-3, 20), np.zeros(20)))
    assert res.integral_estimate == 0.0 and res.trend == FINITE


@pytest.mark.parametrize("delta", [0.05, 0.1, 0.2])
def test_dudley_double_exponential_diverges(delta):
    eps = np.geomspace(1.0, 1e-2, 60)
    res = dudley_check(synthetic_profile(eps, np.exp(eps ** (-1.0 / (1.0 + delta)))))
    assert res.trend == DIVERGING


def test_dudley_steep_power_diverges():
    eps = np.geomspace(1.0, 1e-3, 60)
    assert dudley_check(synthetic_profile(eps, eps**-3.0)).trend == DIVERGING


def test_dudley_needs_two_decades():
    with pytest.raises(ValueError):
        dudley_check(synthetic_profile(np.geomspace(1.0, 0.1, 10), np.ones(10)))


# ---------------------------------------------------------------- eta0 probe


@pytest.fixture(scope="module")
def probe():
    return example41_probe(0.1, node_count=400)


def test_probe_volume_bound_holds(probe):
    assert probe["volume_bound"]["all_hold"]


def test_probe_ball_at_zero_shrinks(probe):
    assert probe["ball_at_zero"]["shrinks_as_eps_decreases"]
    mass = probe["ball_at_zero"]["mass"]
    assert mass[0] == pytest.approx(probe["volume_bound"]["mu_T"])
    assert mass[-1] < mass[0]


def test_probe_profile_consistent(probe):
    H = np.array(probe["profile"]["H"])
    assert np.all(np.diff(H) >= 0)
    assert H[0] == 0.0
    assert H.max() <= math.log(401) + 1e-12
    assert 0 < probe["resolution_floor"] < probe["diameter"]


def test_probe_rejects_delta():
    with pytest.raises(ValueError, match="delta"):
        example41_probe(0.3)
