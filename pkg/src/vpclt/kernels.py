"""Kernel dispatch: compiled core when importable, numpy fallback otherwise.

Set ``VPCLT_PURE=1`` in the environment to force the fallback.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("VPCLT_PURE"):
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _fallback


def greedy_net_counts(dist, order, radii):
    """Size of the greedy r-net visited in ``order``, for every radius in ``radii``."""
    return _impl.greedy_net_counts(
        np.ascontiguousarray(dist, dtype=np.float64),
        np.ascontiguousarray(order, dtype=np.int64),
        np.ascontiguousarray(radii, dtype=np.float64),
    )


def increment_ratio_max(paths, spans):
    return _impl.increment_ratio_max(
        np.ascontiguousarray(paths, dtype=np.float64),
        np.ascontiguousarray(spans, dtype=np.float64),
    )


def row_exp_sums(values, lambdas, top):
    # numpy's vectorised exp beats a scalar libm loop here, so both backends use it
    return _fallback.row_exp_sums(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(lambdas, dtype=np.float64),
        float(top),
    )


def bridge_survival(paths, level, step):
    return _impl.bridge_survival(
        np.ascontiguousarray(paths, dtype=np.float64), float(level), float(step)
    )
