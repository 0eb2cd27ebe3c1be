"""Vectorized numpy versions of the CSR kernels.

Used when the compiled ``_kernels`` extension is unavailable, or when
``EGCN_KERNELS=python`` is set. Every function here has a twin with the same
signature in ``_kernels.pyx``.
"""

import numpy as np


def _row_ids(indptr):
    n = len(indptr) - 1
    return np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))


def _segment_sum(values, indptr, n_rows):
    # values are grouped by row in CSR order; empty rows stay zero
    out = np.zeros((n_rows,) + values.shape[1:], dtype=np.float64)
    counts = np.diff(indptr)
    nonempty = counts > 0
    if values.shape[0] == 0 or not nonempty.any():
        return out
    starts = indptr[:-1][nonempty]
    out[nonempty] = np.add.reduceat(values, starts, axis=0)
    return out


def csr_spmm(indptr, indices, data, x):
    """Y = S @ X for S in CSR form."""
    n = len(indptr) - 1
    prod = data[:, None] * x[indices]
    return _segment_sum(prod, indptr, n)


def csr_spmm_t(indptr, indices, data, y, n_cols):
    """Z = S.T @ Y for S in CSR form with ``n_cols`` columns."""
    rows = _row_ids(indptr)
    out = np.zeros((n_cols, y.shape[1]), dtype=np.float64)
    np.add.at(out, indices, data[:, None] * y[rows])
    return out


def csr_sddmm(indptr, indices, a, b):
    """Per stored entry (i, j): dot(a[i], b[j])."""
    rows = _row_ids(indptr)
    return np.einsum("ij,ij->i", a[rows], b[indices])


def segment_softmax(indptr, e):
    """Softmax of edge scores within each CSR row, max-subtracted."""
    n = len(indptr) - 1
    out = np.empty_like(e, dtype=np.float64)
    if e.shape[0] == 0:
        return out
    counts = np.diff(indptr)
    nonempty = counts > 0
    starts = indptr[:-1][nonempty]
    row_max = np.full(n, -np.inf)
    row_max[nonempty] = np.maximum.reduceat(e, starts)
    rows = _row_ids(indptr)
    ex = np.exp(e - row_max[rows])
    denom = np.zeros(n)
    denom[nonempty] = np.add.reduceat(ex, starts)
    out[:] = ex / denom[rows]
    return out


def segment_softmax_backward(indptr, alpha, grad_alpha):
    """Adjoint of ``segment_softmax``: de = alpha * (g - sum_row(alpha * g))."""
    n = len(indptr) - 1
    rows = _row_ids(indptr)
    dots = _segment_sum(alpha * grad_alpha, indptr, n)
    return alpha * (grad_alpha - dots[rows])
