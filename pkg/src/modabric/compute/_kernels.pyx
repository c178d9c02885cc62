# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics mirror :mod:`modabric.compute._fallback` exactly."""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def scatter_add_rows(real[:, ::1] dst, const cnp.int64_t[::1] rows, const real[:, ::1] src):
    cdef Py_ssize_t n = rows.shape[0], d = dst.shape[1], nrows = dst.shape[0]
    cdef Py_ssize_t i, j, r
    if src.shape[0] != n or src.shape[1] != d:
        raise ValueError("scatter_add_rows: src shape does not match rows/dst")
    for i in range(n):
        r = rows[i]
        if r < 0 or r >= nrows:
            raise IndexError(f"row index {r} out of range [0, {nrows})")
    with nogil:
        for i in range(n):
            r = rows[i]
            for j in range(d):
                dst[r, j] += src[i, j]


def max_over_time(const real[:, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], p = x.shape[1], f = x.shape[2]
    cdef Py_ssize_t i, t, k
    if p < 1:
        raise ValueError("max_over_time needs at least one position")
    dtype = np.float32 if real is float else np.float64
    vals_arr = np.empty((b, f), dtype=dtype)
    arg_arr = np.zeros((b, f), dtype=np.int64)
    cdef real[:, ::1] vals = vals_arr
    cdef cnp.int64_t[:, ::1] arg = arg_arr
    with nogil:
        for i in range(b):
            for k in range(f):
                vals[i, k] = x[i, 0, k]
            for t in range(1, p):
                for k in range(f):
                    # strict > keeps the lowest index on ties
                    if x[i, t, k] > vals[i, k]:
                        vals[i, k] = x[i, t, k]
                        arg[i, k] = t
    return vals_arr, arg_arr


def max_over_time_backward(const real[:, ::1] grad, const cnp.int64_t[:, ::1] arg, Py_ssize_t positions):
    cdef Py_ssize_t b = grad.shape[0], f = grad.shape[1]
    cdef Py_ssize_t i, k
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((b, positions, f), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for i in range(b):
            for k in range(f):
                out[i, arg[i, k], k] += grad[i, k]
    return out_arr


def sample_negatives_batch(
    const cnp.int64_t[::1] candidates,
    const cnp.int64_t[::1] excl_indptr,
    const cnp.int64_t[::1] excl_indices,
    const double[:, ::1] uniforms,
    Py_ssize_t n_items,
):
    cdef Py_ssize_t batch = uniforms.shape[0], z = uniforms.shape[1]
    cdef Py_ssize_t nc = candidates.shape[0]
    cdef Py_ssize_t b, i, j, m, e
    cdef cnp.int64_t tmp
    mark_arr = np.zeros(n_items, dtype=np.uint8)
    pool_arr = np.empty(nc, dtype=np.int64)
    out_arr = np.empty((batch, z), dtype=np.int64)
    cdef unsigned char[::1] mark = mark_arr
    cdef cnp.int64_t[::1] pool = pool_arr
    cdef cnp.int64_t[:, ::1] out = out_arr
    for b in range(batch):
        for e in range(excl_indptr[b], excl_indptr[b + 1]):
            mark[excl_indices[e]] = 1
        m = 0
        for i in range(nc):
            if not mark[candidates[i]]:
                pool[m] = candidates[i]
                m += 1
        for e in range(excl_indptr[b], excl_indptr[b + 1]):
            mark[excl_indices[e]] = 0
        if m < z:
            raise ValueError(f"negative pool has {m} items, fewer than z={z}")
        for i in range(z):
            j = i + <Py_ssize_t>(uniforms[b, i] * (m - i))
            if j > m - 1:
                j = m - 1
            tmp = pool[i]
            pool[i] = pool[j]
            pool[j] = tmp
            out[b, i] = pool[i]
    return out_arr
