# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror :mod:`vpclt._fallback` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()


def greedy_net_counts(const double[:, ::1] dist, const long[::1] order, const double[::1] radii):
    """Greedy r-net size for each radius (a cover and a packing at the same time)."""
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t nr = radii.shape[0]
    cdef Py_ssize_t a, b, c, i
    cdef long count
    cdef double r
    out = np.zeros(nr, dtype=np.int64)
    cdef long[::1] out_v = out
    covered = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] cov = covered
    for a in range(nr):
        r = radii[a]
        for b in range(n):
            cov[b] = 0
        count = 0
        for b in range(n):
            i = order[b]
            if cov[i]:
                continue
            count += 1
            for c in range(n):
                if not cov[c] and dist[i, c] <= r:
                    cov[c] = 1
        out_v[a] = count
    return out


def increment_ratio_max(const double[:, ::1] paths, const double[::1] spans):
    """max over rows with span > 0 of |x_i - x_j| / span, as an N x N matrix."""
    cdef Py_ssize_t rows = paths.shape[0]
    cdef Py_ssize_t n = paths.shape[1]
    cdef Py_ssize_t r, i, j
    cdef double inv, v
    q = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] qv = q
    for r in range(rows):
        if spans[r] <= 0.0:
            continue
        inv = 1.0 / spans[r]
        for i in range(n):
            for j in range(i + 1, n):
                v = fabs(paths[r, i] - paths[r, j]) * inv
                if v > qv[i, j]:
                    qv[i, j] = v
    for i in range(n):
        for j in range(i + 1, n):
            qv[j, i] = qv[i, j]
    return q


def row_exp_sums(const double[:, ::1] values, const double[::1] lambdas, double top):
    """S[r, l] = sum_j exp(lambdas[l] * (values[r, j] - top)); top must bound the values."""
    cdef Py_ssize_t rows = values.shape[0]
    cdef Py_ssize_t n = values.shape[1]
    cdef Py_ssize_t nl = lambdas.shape[0]
    cdef Py_ssize_t r, j, l
    cdef double acc, lam
    out = np.zeros((rows, nl), dtype=np.float64)
    cdef double[:, ::1] ov = out
    for l in range(nl):
        lam = lambdas[l]
        for r in range(rows):
            acc = 0.0
            for j in range(n):
                acc += exp(lam * (values[r, j] - top))
            ov[r, l] = acc
    return out


def bridge_survival(const double[:, ::1] paths, double level, double step):
    """Per-path probability that the Brownian-bridge interpolant stays below ``level``.

    Columns are consecutive nodes spaced ``step`` apart in time; the segment
    before the first column starts at 0.
    """
    cdef Py_ssize_t rows = paths.shape[0]
    cdef Py_ssize_t n = paths.shape[1]
    cdef Py_ssize_t r, j
    cdef double prev, cur, surv
    out = np.zeros(rows, dtype=np.float64)
    cdef double[::1] ov = out
    for r in range(rows):
        surv = 1.0
        prev = 0.0
        for j in range(n):
            cur = paths[r, j]
            if cur >= level or prev >= level:
                surv = 0.0
                break
            surv *= 1.0 - exp(-2.0 * (level - prev) * (level - cur) / step)
            prev = cur
        ov[r] = surv
    return out
