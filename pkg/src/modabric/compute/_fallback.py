"""Pure numpy/Python versions of the compiled kernels.

Each function must return exactly what its counterpart in ``_kernels.pyx``
returns for the same inputs, including the consumption order of random
draws, so that switching backends never changes a training trajectory.
"""
import numpy as np


def scatter_add_rows(dst, rows, src):
    if src.shape != (rows.shape[0], dst.shape[1]):
        raise ValueError("scatter_add_rows: src shape does not match rows/dst")
    if rows.size and (rows.min() < 0 or rows.max() >= dst.shape[0]):
        bad = rows[(rows < 0) | (rows >= dst.shape[0])][0]
        raise IndexError(f"row index {bad} out of range [0, {dst.shape[0]})")
    np.add.at(dst, rows, src)


def max_over_time(x):
    if x.shape[1] < 1:
        raise ValueError("max_over_time needs at least one position")
    # argmax returns the first occurrence, i.e. the lowest index on ties
    arg = np.argmax(x, axis=1)
    vals = np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :]
    return np.ascontiguousarray(vals), arg.astype(np.int64)


def max_over_time_backward(grad, arg, positions):
    b, f = grad.shape
    out = np.zeros((b, positions, f), dtype=grad.dtype)
    np.put_along_axis(out, arg[:, None, :], grad[:, None, :], axis=1)
    return out


def sample_negatives_batch(candidates, excl_indptr, excl_indices, uniforms, n_items):
    batch, z = uniforms.shape
    out = np.empty((batch, z), dtype=np.int64)
    for b in range(batch):
        excluded = excl_indices[excl_indptr[b]:excl_indptr[b + 1]]
        pool = candidates[~np.isin(candidates, excluded)].tolist()
        m = len(pool)
        if m < z:
            raise ValueError(f"negative pool has {m} items, fewer than z={z}")
        row = uniforms[b].tolist()
        for i in range(z):
            j = min(i + int(row[i] * (m - i)), m - 1)
            pool[i], pool[j] = pool[j], pool[i]
        out[b] = pool[:z]
    return out
