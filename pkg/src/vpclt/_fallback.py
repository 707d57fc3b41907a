"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def greedy_net_counts(dist, order, radii):
    n = dist.shape[0]
    out = np.zeros(len(radii), dtype=np.int64)
    for a, r in enumerate(radii):
        covered = np.zeros(n, dtype=bool)
        count = 0
        for i in order:
            if covered[i]:
                continue
            count += 1
            covered |= dist[i] <= r
        out[a] = count
    return out


def increment_ratio_max(paths, spans):
    n = paths.shape[1]
    q = np.zeros((n, n))
    for row, span in zip(paths, spans):
        if span <= 0.0:
            continue
        np.maximum(q, np.abs(row[:, None] - row[None, :]) / span, out=q)
    np.fill_diagonal(q, 0.0)
    return q


def row_exp_sums(values, lambdas, top):
    out = np.empty((values.shape[0], len(lambdas)))
    shifted = values - top
    for l, lam in enumerate(lambdas):
        out[:, l] = np.exp(lam * shifted).sum(axis=1)
    return out


def bridge_survival(paths, level, step):
    prev = np.concatenate([np.zeros((paths.shape[0], 1)), paths[:, :-1]], axis=1)
    hit = (paths >= level) | (prev >= level)
    with np.errstate(over="ignore", invalid="ignore"):
        factor = 1.0 - np.exp(-2.0 * (level - prev) * (level - paths) / step)
    factor = np.where(hit, 0.0, factor)
    return np.prod(factor, axis=1)
