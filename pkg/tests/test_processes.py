import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpclt.approximation import PeriodicGrid
from vpclt.processes import (
    CovarianceMatrix,
    PathEnsemble,
    ProcessSpec,
    analytic_covariance,
    empirical_covariance,
    eta0_nodes,
    eta0_tau,
    factorization_pair,
    normalized_sum,
    sample,
    sequence_a,
    sequence_example_moments,
    sequence_second_moment,
    tau_distance,
)

GRID = PeriodicGrid(32)


# ---------------------------------------------------------------- specs


@pytest.mark.parametrize(
    "kind, params, field",
    [
        ("eta0", {"delta": 0.5}, "process.delta"),
        ("eta0", {"delta": 0.0}, "process.delta"),
        ("sequence_example", {"p0": 2.5}, "process.p0"),
        ("sequence_example", {"alpha": 1.2}, "process.alpha"),
        ("random_trig", {"law": "cauchy"}, "process.law"),
        ("wiener", {"delta": 0.1}, "process.delta"),
        ("brownian", {}, "process.kind"),
    ],
)
def test_spec_validation_names_field(kind, params, field):
    with pytest.raises(ValueError, match=field):
        ProcessSpec(kind, params)


def test_spec_defaults_recorded():
    spec = ProcessSpec("eta0", {"delta": 0.2})
    assert spec.params["node_count"] == 512
    assert ProcessSpec.from_dict(spec.to_dict()) == spec


def test_sequence_alpha_bound():
    # p0 / (2 - p0) > 1 on (1, 2), so the bound min(1, p0 / (2 - p0)) is 1
    ProcessSpec("sequence_example", {"alpha": 0.99, "p0": 1.05})
    with pytest.raises(ValueError, match="process.alpha"):
        ProcessSpec("sequence_example", {"alpha": 1.0, "p0": 1.9})


# ---------------------------------------------------------------- sampling


def test_eta0_zero_at_origin():
    ens = sample(ProcessSpec("eta0", {"delta": 0.1, "node_count": 64}), count=500, master_seed=3)
    assert ens.nodes[0] == 0.0
    assert np.all(ens.paths[:, 0] == 0.0)


@pytest.mark.parametrize("spec", [
    ProcessSpec("wiener"),
    ProcessSpec("random_trig", {"law": "rademacher"}),
    ProcessSpec("random_trig", {"law": "uniform", "max_degree": 4}),
    ProcessSpec("eta0", {"delta": 0.1, "node_count": 40}),
    ProcessSpec("sequence_example", {"n_max": 16}),
])
def test_centering(spec):
    ens = sample(spec, GRID, 20000, master_seed=11)
    mean = ens.paths.mean(axis=0)
    std = ens.paths.std(axis=0)
    assert np.all(np.abs(mean) <= 4.0 * std / math.sqrt(ens.count) + 1e-15)


def test_wiener_variance():
    g = PeriodicGrid(64)
    ens = sample(ProcessSpec("wiener"), g, 100_000, master_seed=5, threads=4)
    var = ens.paths.var(axis=0)
    assert var[0] == 0.0
    assert np.all(np.abs(var[1:] / g.nodes[1:] - 1.0) < 0.05)


def test_same_seed_bit_identical_across_threads():
    spec = ProcessSpec("random_trig", {"law": "rademacher"})
    a = normalized_sum(spec, 7, 1000, GRID, master_seed=42, threads=1).paths
    b = normalized_sum(spec, 7, 1000, GRID, master_seed=42, threads=8).paths
    assert a.tobytes() == b.tobytes()
    c = normalized_sum(spec, 7, 1000, GRID, master_seed=43).paths
    assert not np.array_equal(a, c)


def test_prefix_stability():
    # the first blocks do not depend on how many realizations follow
    spec = ProcessSpec("wiener")
    a = sample(spec, GRID, 300, master_seed=9).paths
    b = sample(spec, GRID, 1000, master_seed=9).paths
    assert np.array_equal(a, b[:300])


def test_normalized_sum_n1_is_sample():
    spec = ProcessSpec("random_trig", {"law": "uniform"})
    a = sample(spec, GRID, 600, master_seed=1).paths
    b = normalized_sum(spec, 1, 600, GRID, master_seed=1).paths
    assert a.tobytes() == b.tobytes()


def test_normalized_sum_variance_stable():
    spec = ProcessSpec("random_trig", {"law": "rademacher", "max_degree": 4})
    target = np.diag(analytic_covariance(spec, GRID).entries)
    for n in (1, 5, 40):
        ens = normalized_sum(spec, n, 40_000, GRID, master_seed=n)
        var = ens.paths.var(axis=0, ddof=1)
        # relative std error of a variance estimate is about sqrt(2 / R) for near-Gaussian data
        assert np.max(np.abs(var / target - 1.0)) < 6 * math.sqrt(2.0 / ens.count) + 0.01
        assert np.all(np.abs(ens.paths.mean(axis=0)) < 4.5 * np.sqrt(target / ens.count))


def test_normalized_sum_rejects_bad_n():
    with pytest.raises(ValueError):
        normalized_sum(ProcessSpec("wiener"), 0, 10)


def test_user_table(tmp_path):
    g = PeriodicGrid(8)
    rows = np.random.default_rng(0).standard_normal((50, 8)) + 3.0
    path = tmp_path / "paths.csv"
    with open(path, "w") as fh:
        fh.write(",".join(f"{t:.17g}" for t in g.nodes) + "\n")
        for r in rows:
            fh.write(",".join(f"{x:.17g}" for x in r) + "\n")
    spec = ProcessSpec("user_table", {"path": str(path)})
    ens = sample(spec, count=2000, master_seed=2)
    assert ens.grid == g
    centered = rows - rows.mean(axis=0)
    # every realization is one of the centered table rows
    hits = (np.abs(ens.paths[:, None, :] - centered[None, :, :]).max(axis=2) < 1e-12).any(axis=1)
    assert hits.all()


def test_user_table_requires_path():
    with pytest.raises(ValueError, match="process.path"):
        ProcessSpec("user_table")


# ---------------------------------------------------------------- covariance


def test_empirical_covariance_zero():
    ens = sample(ProcessSpec("zero"), GRID, 10)
    assert np.all(empirical_covariance(ens).entries == 0.0)


def test_empirical_covariance_needs_two_rows():
    with pytest.raises(ValueError):
        empirical_covariance(PathEnsemble(GRID.nodes, np.zeros((1, 32))))


def test_random_trig_covariance_matches_closed_form():
    spec = ProcessSpec("random_trig", {"law": "rademacher", "max_degree": 3})
    ens = sample(spec, GRID, 100_000, master_seed=8, threads=4)
    emp = empirical_covariance(ens).entries
    ref = analytic_covariance(spec, GRID).entries
    # closed form: sum_k s_k^2 cos(k (t - s)) with s_k = 1/k
    d = np.subtract.outer(GRID.nodes, GRID.nodes)
    direct = sum(np.cos(k * d) / k**2 for k in (1, 2, 3))
    assert np.allclose(ref, direct, atol=1e-12)
    assert np.max(np.abs(emp - ref)) < 0.05 * np.max(np.abs(ref))
    assert empirical_covariance(ens).is_psd()


def test_wiener_covariance_closed_form():
    ref = analytic_covariance(ProcessSpec("wiener"), GRID).entries
    assert np.allclose(ref, np.minimum.outer(GRID.nodes, GRID.nodes))


def test_covariance_is_symmetrized():
    c = CovarianceMatrix(np.arange(2.0), [[1.0, 0.2], [0.4, 1.0]])
    assert c.entries[0, 1] == c.entries[1, 0] == pytest.approx(0.3)


# ---------------------------------------------------------------- tau


def test_tau_deterministic_process_is_zero():
    tau = tau_distance(analytic_covariance(ProcessSpec("zero"), GRID))
    assert np.all(tau.dist == 0.0) and tau.clamped == 0


def test_tau_scalar_gaussian_times_cosine():
    c = np.cos(GRID.nodes)
    tau = tau_distance(CovarianceMatrix(GRID.nodes, np.outer(c, c)))
    assert np.allclose(tau.dist, np.abs(np.subtract.outer(c, c)), atol=1e-7)


def test_tau_clamps_negative_radicands():
    cov = CovarianceMatrix(np.arange(2.0), [[1.0, 1.0 + 1e-9], [1.0 + 1e-9, 1.0]])
    tau = tau_distance(cov)
    assert tau.clamped == 2 and np.all(tau.dist == 0.0)


@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_tau_is_semimetric(seed, rank):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((10, rank))
    d = tau_distance(CovarianceMatrix(np.arange(10.0), a @ a.T)).dist
    assert np.allclose(d, d.T) and np.all(np.diag(d) == 0)
    viol = d[:, None, :] - d[:, :, None] - d[None, :, :]  # d(i,k) - d(i,j) - d(j,k)
    assert np.max(viol) < 1e-9


@pytest.mark.parametrize("delta", [0.05, 0.1, 0.2])
def test_eta0_tau_to_origin(delta):
    u = np.array([np.inf, 5.0, 50.0, 500.0])
    d = eta0_tau(delta, u)
    expected = np.sqrt(1.0 / (2.0 * np.log(u[1:]) ** (1.0 + delta)))
    assert np.allclose(d[0, 1:], expected, rtol=1e-12)


def test_eta0_tau_matches_covariance_route():
    spec = ProcessSpec("eta0", {"delta": 0.1, "node_count": 30})
    t = eta0_nodes(30, 1e-300)
    via_cov = tau_distance(analytic_covariance(spec)).dist
    with np.errstate(divide="ignore"):
        u = -np.log(t)
    assert np.allclose(eta0_tau(0.1, u), via_cov, atol=1e-12)


def test_eta0_variance_exponent_from_samples():
    # the sampled variance follows 1 / (2 (log|log t|)^(1+delta)), not the text's squared exponent
    delta = 0.2
    spec = ProcessSpec("eta0", {"delta": delta, "node_count": 200})
    ens = sample(spec, count=20_000, master_seed=4, threads=4)
    t = ens.nodes[1:]
    var = ens.paths[:, 1:].var(axis=0)
    loglog = np.log(np.log(1.0 / t))
    slope = np.polyfit(np.log(loglog), np.log(var), 1)[0]
    assert slope == pytest.approx(-(1.0 + delta), abs=0.05)


# ---------------------------------------------------------------- factorization


def test_factorization_trivial():
    ens = PathEnsemble(GRID.nodes, np.full((4, 32), 2.5))
    fp = factorization_pair(ens)
    assert fp.trivial and np.all(fp.L_samples == 0) and np.all(fp.q == 0)


def test_factorization_two_points():
    eps = np.array([1.0, -1.0, -1.0, 1.0])
    ens = PathEnsemble(np.array([0.0, 1.0]), np.column_stack([eps, -eps]))
    fp = factorization_pair(ens)
    assert np.all(fp.L_samples == 2.0)
    assert fp.q[0, 1] == 1.0 and fp.q[0, 0] == 0.0


def test_factorization_inequality_and_triangle():
    ens = sample(ProcessSpec("wiener"), PeriodicGrid(16), 300, master_seed=2)
    fp = factorization_pair(ens)
    q = fp.q
    assert np.allclose(q, q.T) and np.all(np.diag(q) == 0) and np.all(q <= 1.0)
    for path, L in zip(ens.paths, fp.L_samples):
        assert np.all(np.abs(np.subtract.outer(path, path)) <= L * q + 1e-12)
    n = len(q)
    worst = max(q[i, k] - q[i, j] - q[j, k] for i in range(n) for j in range(n) for k in range(n))
    assert worst < 1e-9


# ---------------------------------------------------------------- sequence example


def test_sequence_a():
    for alpha in (0.1, 0.5, 0.9):
        assert sequence_a(1, alpha) == 0.5


def test_sequence_moments_against_exact():
    res = sequence_example_moments(0.5, 1.5, 16, 400_000, master_seed=6)
    emp = np.array(res["second_moment"])
    exact = sequence_second_moment(np.arange(1, 17), 0.5, 1.5)
    assert np.allclose(exact, np.array(res["second_moment_exact"]))
    # |eta_n|^2 = n^(2 alpha / p0) * Exp(1) on its cell, so the relative error is about 1/sqrt(hits)
    hits = np.array(res["hits"])
    rel = np.abs(emp / exact - 1.0)
    assert np.all(rel < 5.0 * np.sqrt(2.0 / hits))
    assert res["decay_fit"]["exponent"] < 0
    mean = np.array(res["mean"])
    assert np.all(np.abs(mean) < 5.0 * np.sqrt(exact / res["realizations"]))


def test_sequence_hit_probabilities():
    res = sequence_example_moments(0.5, 1.5, 8, 200_000, master_seed=7)
    n = np.arange(1, 9)
    p = sequence_a(n + 1, 0.5) - sequence_a(n, 0.5)
    hits = np.array(res["hits"]) / res["realizations"]
    assert np.all(np.abs(hits - p) < 5.0 * np.sqrt(p / res["realizations"]))
