"""Kernel dispatch.

The compiled ``_kernels`` extension is used when it imports; otherwise the numpy
fallback in ``_kernels_py`` is used. Set ``DPSYNTH_PURE_PYTHON=1`` to force the
fallback (the benchmark and parity tests rely on this switch).
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if not os.environ.get("DPSYNTH_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _as_rows(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return a.reshape(len(a), -1) if a.ndim != 2 else a


def rdp_log_a_int(q, sigma, alpha):
    return _impl.rdp_log_a_int(float(q), float(sigma), int(alpha))


def nearest(queries, refs):
    """Return ``(index, squared distance)`` of the nearest row of ``refs`` for each query."""
    return _impl.nearest(_as_rows(queries), _as_rows(refs))


def knn_sq_radius(points, k):
    points = _as_rows(points)
    if not 1 <= k < len(points):
        raise ValueError(f"k={k} needs 1 <= k < {len(points)}")
    return _impl.knn_sq_radius(points, int(k))


def vote_histogram(voters, candidates):
    return _impl.vote_histogram(_as_rows(voters), _as_rows(candidates))
