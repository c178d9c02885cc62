"""Kernel dispatch: compiled Cython kernels when importable, numpy otherwise.

Set ``MODABRIC_KERNELS=python`` to force the fallback.
"""
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("MODABRIC_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def _real(a):
    a = np.ascontiguousarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


def scatter_add_rows(dst: np.ndarray, rows, src) -> None:
    """In place ``dst[rows[i]] += src[i]``; repeated rows accumulate."""
    if not dst.flags.c_contiguous:
        raise ValueError("scatter_add_rows needs a C-contiguous destination")
    rows = np.ascontiguousarray(rows, dtype=np.int64).reshape(-1)
    src = np.ascontiguousarray(src, dtype=dst.dtype).reshape(rows.shape[0], -1)
    _impl.scatter_add_rows(dst, rows, src)


def max_over_time(x: np.ndarray):
    return _impl.max_over_time(_real(x))


def max_over_time_backward(grad: np.ndarray, arg: np.ndarray, positions: int) -> np.ndarray:
    return _impl.max_over_time_backward(
        _real(grad), np.ascontiguousarray(arg, dtype=np.int64), int(positions)
    )


def sample_negatives_batch(candidates, excl_indptr, excl_indices, uniforms, n_items: int) -> np.ndarray:
    """Draw ``z`` distinct items per row from ``candidates`` minus that row's exclusions.

    Row ``b`` excludes ``excl_indices[excl_indptr[b]:excl_indptr[b+1]]``. The
    draw is a partial Fisher-Yates shuffle driven by ``uniforms[b]`` (values in
    [0, 1)), so results depend only on the supplied uniforms.
    """
    return _impl.sample_negatives_batch(
        np.ascontiguousarray(candidates, dtype=np.int64),
        np.ascontiguousarray(excl_indptr, dtype=np.int64),
        np.ascontiguousarray(excl_indices, dtype=np.int64),
        np.ascontiguousarray(uniforms, dtype=np.float64),
        int(n_items),
    )
