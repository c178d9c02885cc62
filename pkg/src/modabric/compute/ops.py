"""Forward and backward passes for the fixed set of layers both models use.

Tensors are plain numpy arrays. Every op validates shapes up front and
raises :class:`~modabric.errors.ShapeError` on mismatch. Batched variants
accept a leading batch axis where noted.
"""
from __future__ import annotations

import numpy as np

from ..errors import NonFiniteError, SequenceTooShortError, ShapeError
from . import kernels

ACTIVATIONS = ("relu", "identity")


def check_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite values in {what}")
    return a


def _check_activation(activation: str) -> None:
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def dense_forward(x, W, b, activation: str = "identity") -> np.ndarray:
    """``act(x @ W + b)`` for ``x`` of shape (batch, in)."""
    _check_activation(activation)
    x = np.asarray(x)
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1 or x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"dense_forward: x{x.shape} W{W.shape} b{b.shape} do not conform")
    y = x @ W + b
    if activation == "relu":
        np.maximum(y, 0.0, out=y)
    return y


def dense_backward(x, W, b, upstream, activation: str = "identity", out=None):
    """Gradients of :func:`dense_forward` w.r.t. ``x``, ``W`` and ``b``.

    Pass the forward output as ``out`` to skip recomputing the relu mask.
    """
    _check_activation(activation)
    x = np.asarray(x)
    n_out = W.shape[1] if W.ndim == 2 else -1
    if upstream.shape != (x.shape[0], n_out) or x.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (n_out,):
        raise ShapeError(f"dense_backward: upstream{upstream.shape} vs x{x.shape} W{W.shape}")
    if activation == "relu":
        if out is None:
            out = x @ W + b
        upstream = upstream * (out > 0)
    return upstream @ W.T, x.T @ upstream, upstream.sum(axis=0)


def embedding_lookup(table: np.ndarray, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    return table[ids]


def embedding_backward(grad_table: np.ndarray, ids, upstream) -> None:
    """Scatter-add ``upstream`` rows into ``grad_table`` at ``ids`` (in place)."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    kernels.scatter_add_rows(grad_table, ids, np.asarray(upstream).reshape(ids.shape[0], -1))


def _as_batch(seq):
    seq = np.asarray(seq)
    if seq.ndim == 2:
        return seq[None], True
    if seq.ndim == 3:
        return seq, False
    raise ShapeError(f"sequence must be (len, dim) or (batch, len, dim), got {seq.shape}")


def _windows(seq, width):
    # (B, L, D) -> (B*P, width*D), P = L - width + 1
    B, L, D = seq.shape
    P = L - width + 1
    win = np.lib.stride_tricks.sliding_window_view(seq, width, axis=1)  # (B, P, D, width)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * P, width * D)


def conv1d_forward(seq, filters, bias) -> np.ndarray:
    """Valid 1-D correlation followed by relu.

    ``seq`` is (len, dim) or (batch, len, dim); ``filters`` is (width, dim, nfilt).
    Output is (len - width + 1, nfilt), with the batch axis kept if given.
    """
    x, squeeze = _as_batch(seq)
    if filters.ndim != 3 or filters.shape[1] != x.shape[2] or bias.shape != (filters.shape[2],):
        raise ShapeError(f"conv1d_forward: seq{np.shape(seq)} filters{filters.shape} bias{bias.shape}")
    width, dim, nfilt = filters.shape
    B, L, _ = x.shape
    if L < width:
        raise SequenceTooShortError(f"sequence length {L} < filter width {width}; pad the input")
    P = L - width + 1
    y = (_windows(x, width) @ filters.reshape(width * dim, nfilt) + bias).reshape(B, P, nfilt)
    np.maximum(y, 0.0, out=y)
    return y[0] if squeeze else y


def conv1d_backward(seq, filters, bias, upstream, out=None):
    """Gradients of :func:`conv1d_forward`; returns (grad_seq, grad_filters, grad_bias)."""
    x, squeeze = _as_batch(seq)
    width, dim, nfilt = filters.shape
    B, L, _ = x.shape
    P = L - width + 1
    g = np.asarray(upstream)
    if squeeze:
        g = g[None]
    if g.shape != (B, P, nfilt):
        raise ShapeError(f"conv1d_backward: upstream{np.shape(upstream)} expected {(B, P, nfilt)}")
    if out is None:
        out = conv1d_forward(x, filters, bias)
    elif squeeze:
        out = out[None]
    g = (g * (out > 0)).reshape(B * P, nfilt)
    cols = _windows(x, width)
    grad_filters = (cols.T @ g).reshape(width, dim, nfilt)
    grad_cols = (g @ filters.reshape(width * dim, nfilt).T).reshape(B, P, width, dim)
    grad_seq = np.zeros_like(x, dtype=grad_cols.dtype)
    for o in range(width):
        grad_seq[:, o:o + P] += grad_cols[:, :, o]
    grad_bias = g.sum(axis=0)
    return (grad_seq[0] if squeeze else grad_seq), grad_filters, grad_bias


def max_over_time(features):
    """Per-filter maximum over positions; returns (values, argmax), ties to lowest index."""
    f = np.asarray(features)
    squeeze = f.ndim == 2
    if squeeze:
        f = f[None]
    if f.ndim != 3:
        raise ShapeError(f"max_over_time expects (positions, nfilt), got {np.shape(features)}")
    if f.shape[1] == 0:
        raise ShapeError("max_over_time over zero positions")
    vals, arg = kernels.max_over_time(f)
    return (vals[0], arg[0]) if squeeze else (vals, arg)


def max_over_time_backward(upstream, argmax, positions: int) -> np.ndarray:
    g = np.asarray(upstream)
    squeeze = g.ndim == 1
    if squeeze:
        g, argmax = g[None], np.asarray(argmax)[None]
    out = kernels.max_over_time_backward(g, argmax, positions)
    return out[0] if squeeze else out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits, labels, class_weights):
    """Class-weighted mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    class_weights = np.asarray(class_weights)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],) or class_weights.shape != (logits.shape[1],):
        raise ShapeError(f"softmax_cross_entropy: logits{logits.shape} labels{labels.shape} weights{class_weights.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    w = class_weights[labels]
    loss = float(-(w * logp[rows, labels]).sum() / n)
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad *= (w / n)[:, None]
    return loss, grad
