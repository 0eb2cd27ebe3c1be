"""Compressed sparse row matrices with canonical (sorted, deduplicated) storage."""

import numpy as np

from . import kernels


class SparseMatrix:
    """CSR matrix. Column indices are strictly increasing inside each row.

    Instances are treated as immutable once built; the arrays are marked
    read-only so a shared Laplacian cannot be mutated by accident.
    """

    __slots__ = ("shape", "indptr", "indices", "data")

    def __init__(self, indptr, indices, data, shape):
        indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        data = np.ascontiguousarray(data, dtype=np.float64)
        n_rows, n_cols = int(shape[0]), int(shape[1])
        if indptr.shape != (n_rows + 1,):
            raise ValueError("indptr length must be rows + 1")
        if indptr[0] != 0 or indptr[-1] != len(indices) or np.any(np.diff(indptr) < 0):
            raise ValueError("row offsets must start at 0, be non-decreasing and end at nnz")
        if len(indices) != len(data):
            raise ValueError("indices and data lengths differ")
        if len(indices) and (indices.min() < 0 or indices.max() >= n_cols):
            raise ValueError("column index out of range")
        # strictly increasing columns within every row
        if len(indices) > 1:
            step = np.diff(indices)
            row_start = np.zeros(len(indices), dtype=bool)
            row_start[indptr[:-1][np.diff(indptr) > 0]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValueError("column indices must be strictly increasing within each row")
        for a in (indptr, indices, data):
            a.setflags(write=False)
        self.shape = (n_rows, n_cols)
        self.indptr = indptr
        self.indices = indices
        self.data = data

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        """Build from triplets; duplicate (row, col) entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        n_rows, n_cols = shape
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise ValueError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError("column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size:
            new = np.ones(rows.size, dtype=bool)
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(new)
            values = np.add.reduceat(values, starts)
            rows, cols = rows[starts], cols[starts]
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
        return cls(indptr, cols, values, shape)

    @classmethod
    def from_dense(cls, a, tol=0.0):
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(np.abs(a) > tol)
        return cls.from_coo(rows, cols, a[rows, cols], a.shape)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n)
        return cls(np.arange(n + 1), idx, np.ones(n), (n, n))

    @classmethod
    def empty(cls, n_rows, n_cols=None):
        n_cols = n_rows if n_cols is None else n_cols
        return cls(np.zeros(n_rows + 1), [], [], (n_rows, n_cols))

    @property
    def nnz(self):
        return len(self.data)

    def row_ids(self):
        return np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.row_ids(), self.indices] = self.data
        return out

    def transpose(self):
        return SparseMatrix.from_coo(self.indices, self.row_ids(), self.data,
                                     (self.shape[1], self.shape[0]))

    def is_symmetric(self, tol=0.0):
        if self.shape[0] != self.shape[1]:
            return False
        t = self.transpose()
        return (np.array_equal(t.indptr, self.indptr)
                and np.array_equal(t.indices, self.indices)
                and np.allclose(t.data, self.data, rtol=0.0, atol=tol))

    def scaled(self, alpha, shift=0.0):
        """Return alpha * self + shift * I (square matrices only)."""
        n = self.shape[0]
        diag = np.arange(n)
        rows = np.concatenate([self.row_ids(), diag])
        cols = np.concatenate([self.indices, diag])
        vals = np.concatenate([alpha * self.data, np.full(n, float(shift))])
        if shift == 0.0:
            rows, cols, vals = rows[: self.nnz], cols[: self.nnz], vals[: self.nnz]
        return SparseMatrix.from_coo(rows, cols, vals, self.shape).pruned()

    def pruned(self):
        """Drop explicitly stored zeros."""
        keep = self.data != 0.0
        if keep.all():
            return self
        return SparseMatrix.from_coo(self.row_ids()[keep], self.indices[keep],
                                     self.data[keep], self.shape)

    def dot(self, x):
        """Plain (non-recorded) product with a dense 2-D array."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.shape[1]:
            raise ValueError(f"shape mismatch: {self.shape} @ {x.shape}")
        return kernels.csr_spmm(self.indptr, self.indices, self.data, x)

    def tdot(self, y):
        """Plain product of the transpose with a dense 2-D array."""
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[0] != self.shape[0]:
            raise ValueError(f"shape mismatch: {self.shape}^T @ {y.shape}")
        return kernels.csr_spmm_t(self.indptr, self.indices, self.data, y, self.shape[1])

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"
