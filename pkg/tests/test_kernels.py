import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpclt import _fallback, kernels

compiled = pytest.importorskip("vpclt._kernels")


def metric(seed, n):
    x = np.random.default_rng(seed).random((n, 3))
    return np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))


def naive_greedy(d, order, r):
    centres = []
    for i in order:
        if all(d[i, c] > r for c in centres):
            centres.append(i)
    return len(centres)


@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_greedy_counts_agree(seed, n):
    d = metric(seed, n)
    order = np.argsort(-d.max(axis=1), kind="stable").astype(np.int64)
    radii = np.array([0.0, 0.05, 0.2, 0.5, 2.0])
    a = compiled.greedy_net_counts(d, order, radii)
    b = _fallback.greedy_net_counts(d, order, radii)
    assert np.array_equal(a, b)
    assert list(a) == [naive_greedy(d, order, r) for r in radii]


@given(st.integers(0, 2**32 - 1))
def test_increment_ratio_agree(seed):
    rng = np.random.default_rng(seed)
    paths = rng.standard_normal((7, 9))
    paths[2] = 1.0  # a constant path has zero span and is skipped
    spans = paths.max(axis=1) - paths.min(axis=1)
    a = compiled.increment_ratio_max(paths, spans)
    b = _fallback.increment_ratio_max(paths, spans)
    assert np.allclose(a, b, rtol=0, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_row_exp_sums_agree(seed):
    v = np.random.default_rng(seed).standard_normal((5, 11)) * 3
    lam = np.array([1e-3, 0.7, 4.0])
    a = compiled.row_exp_sums(v, lam, v.max())
    b = _fallback.row_exp_sums(v, lam, v.max())
    assert np.allclose(a, b, rtol=1e-13, atol=0)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 3.0))
def test_bridge_survival_agree(seed, level):
    paths = np.cumsum(np.random.default_rng(seed).standard_normal((6, 20)) * 0.2, axis=1)
    a = compiled.bridge_survival(paths, level, 0.04)
    b = _fallback.bridge_survival(paths, level, 0.04)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_pure_switch():
    code = "import vpclt.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"VPCLT_PURE": "1", "PATH": ""},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND == "cython"
