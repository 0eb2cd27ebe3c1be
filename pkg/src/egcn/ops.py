"""Differentiable primitives. Each one records its own adjoint rule."""

import numpy as np

from . import kernels
from .sparse import SparseMatrix
from .tensor import Tensor, record


def _check_same(name, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def adjoint(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return record("matmul", A @ B, (a, b), adjoint)


dense_matmul = matmul


def spmm(s, x):
    """Sparse (constant) times dense tensor."""
    if not isinstance(s, SparseMatrix):
        raise TypeError("spmm expects a SparseMatrix on the left")
    if s.shape[1] != x.shape[0]:
        raise ValueError(f"spmm: shape mismatch {s.shape} @ {x.shape}")

    def adjoint(g):
        return (s.tdot(g),)

    return record("spmm", s.dot(x.data), (x,), adjoint)


sparse_dense_matmul = spmm


def add(a, b):
    _check_same("add", a, b)
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same("sub", a, b)
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same("mul", a, b)
    A, B = a.data, b.data
    return record("mul", A * B, (a, b), lambda g: (g * B, g * A))


def scale(a, c):
    c = float(c)
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def mul_const(a, m):
    """Elementwise product with a constant array (dropout masks)."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != a.shape:
        raise ValueError(f"mul_const: mask shape {m.shape} != {a.shape}")
    return record("mul_const", a.data * m, (a,), lambda g: (g * m,))


def add_row(a, b):
    """a + b with b a 1 x d row broadcast over the rows of a."""
    if b.shape != (1, a.shape[1]):
        raise ValueError(f"add_row: bias shape {b.shape} does not fit {a.shape}")
    return record("add_row", a.data + b.data, (a, b),
                  lambda g: (g, g.sum(axis=0, keepdims=True)))


def sum(a):
    shape = a.shape
    return record("sum", np.array([[a.data.sum()]]), (a,),
                  lambda g: (np.full(shape, g[0, 0]),))


def relu(a):
    mask = a.data > 0
    return record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    factor = np.where(a.data > 0, 1.0, slope)
    return record("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,))


def log_softmax(a):
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    p = np.exp(out)
    return record("log_softmax", out, (a,),
                  lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def concat_cols(tensors):
    tensors = tuple(tensors)
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ValueError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def adjoint(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return record("concat_cols", np.concatenate([t.data for t in tensors], axis=1),
                  tensors, adjoint)


def nll_loss(log_probs, labels, mask=None):
    """Mean of -log_probs[i, labels[i]] over the rows selected by ``mask``.

    ``mask`` may be a boolean vector or an index array; None means all rows.
    """
    n, c = log_probs.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"nll_loss: expected {n} labels, got {labels.shape}")
    if mask is None:
        rows = np.arange(n)
    else:
        mask = np.asarray(mask)
        rows = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if rows.size == 0:
        raise ValueError("nll_loss: empty mask")
    if rows.min() < 0 or rows.max() >= n:
        raise ValueError("nll_loss: mask index out of range")
    picked = labels[rows]
    if picked.min() < 0 or picked.max() >= c:
        raise ValueError(f"nll_loss: label out of range for {c} classes")
    m = rows.size
    value = -log_probs.data[rows, picked].sum() / m

    def adjoint(g):
        d = np.zeros((n, c))
        np.add.at(d, (rows, picked), -g[0, 0] / m)
        return (d,)

    return record("nll_loss", np.array([[value]]), (log_probs,), adjoint)


def batch_norm_train(x, gamma, beta, eps):
    """Column-wise normalization with batch statistics (population variance).

    Returns (output, batch_mean, batch_var); the statistics are plain arrays.
    """
    n = x.shape[0]
    mu = x.data.mean(axis=0, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    G = gamma.data

    def adjoint(g):
        dxhat = g * G
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0, keepdims=True)
                              - xhat * (dxhat * xhat).sum(axis=0, keepdims=True))
        return (dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True))

    out = record("batch_norm_train", G * xhat + beta.data, (x, gamma, beta), adjoint)
    return out, mu, var


def batch_norm_infer(x, gamma, beta, mean, var, eps):
    """Column-wise normalization with fixed (running) statistics."""
    inv_std = 1.0 / np.sqrt(np.asarray(var) + eps)
    xhat = (x.data - mean) * inv_std
    G = gamma.data

    def adjoint(g):
        return (g * G * inv_std, (g * xhat).sum(axis=0, keepdims=True),
                g.sum(axis=0, keepdims=True))

    return record("batch_norm_infer", G * xhat + beta.data, (x, gamma, beta), adjoint)


def edge_scores(s_target, s_neighbor, pattern):
    """Per stored entry (i, j) of ``pattern``: s_target[i] + s_neighbor[j].

    Both score tensors are n x 1; the result is nnz x 1 in CSR order.
    """
    n = pattern.shape[0]
    if s_target.shape != (n, 1) or s_neighbor.shape != (pattern.shape[1], 1):
        raise ValueError("edge_scores: score vectors must be n x 1")
    rows = pattern.row_ids()
    cols = pattern.indices
    out = s_target.data[rows] + s_neighbor.data[cols]

    def adjoint(g):
        gv = g[:, 0]
        return (np.bincount(rows, weights=gv, minlength=n).reshape(-1, 1),
                np.bincount(cols, weights=gv, minlength=pattern.shape[1]).reshape(-1, 1))

    return record("edge_scores", out, (s_target, s_neighbor), adjoint)


def segment_softmax(e, pattern):
    """Softmax of nnz x 1 edge scores within each row of ``pattern``."""
    if e.shape != (pattern.nnz, 1):
        raise ValueError("segment_softmax: scores must be nnz x 1")
    alpha = kernels.segment_softmax(pattern.indptr, e.data[:, 0])

    def adjoint(g):
        de = kernels.segment_softmax_backward(pattern.indptr, alpha, g[:, 0])
        return (de.reshape(-1, 1),)

    return record("segment_softmax", alpha.reshape(-1, 1), (e,), adjoint)


def edge_aggregate(alpha, pattern, h):
    """y[i] = sum over stored (i, j) of alpha_ij * h[j]; alpha is nnz x 1."""
    if alpha.shape != (pattern.nnz, 1):
        raise ValueError("edge_aggregate: weights must be nnz x 1")
    if h.shape[0] != pattern.shape[1]:
        raise ValueError(f"edge_aggregate: {pattern.shape} vs features {h.shape}")
    a = alpha.data[:, 0]
    H = h.data
    ip, ix = pattern.indptr, pattern.indices

    def adjoint(g):
        da = kernels.csr_sddmm(ip, ix, g, H).reshape(-1, 1) if alpha.requires_grad else None
        dh = kernels.csr_spmm_t(ip, ix, a, g, pattern.shape[1]) if h.requires_grad else None
        return (da, dh)

    return record("edge_aggregate", kernels.csr_spmm(ip, ix, a, H), (alpha, h), adjoint)


def constant(a):
    return a if isinstance(a, Tensor) else Tensor(a)
