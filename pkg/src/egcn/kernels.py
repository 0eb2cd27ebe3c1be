"""Backend selection for the CSR kernels.

The compiled extension is preferred. Set ``EGCN_KERNELS=python`` to force the
numpy fallback (useful for benchmarking and for platforms without a C
compiler).
"""

import os

import numpy as np

from . import _kernels_py

_requested = os.environ.get("EGCN_KERNELS", "auto").lower()

_native = None
if _requested != "python":
    try:
        from . import _kernels as _native
    except ImportError:
        if _requested == "native":
            raise

BACKENDS = {"python": _kernels_py}
if _native is not None:
    BACKENDS["native"] = _native

BACKEND = "native" if _native is not None else "python"
_impl = BACKENDS[BACKEND]


def use_backend(name):
    """Switch the process-wide kernel backend; returns the previous name."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}")
    previous = BACKEND
    BACKEND, _impl = name, BACKENDS[name]
    return previous


def _c(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def csr_spmm(indptr, indices, data, x):
    return _impl.csr_spmm(indptr, indices, _c(data), _c(x))


def csr_spmm_t(indptr, indices, data, y, n_cols):
    return _impl.csr_spmm_t(indptr, indices, _c(data), _c(y), int(n_cols))


def csr_sddmm(indptr, indices, a, b):
    return _impl.csr_sddmm(indptr, indices, _c(a), _c(b))


def segment_softmax(indptr, e):
    return _impl.segment_softmax(indptr, _c(e))


def segment_softmax_backward(indptr, alpha, grad_alpha):
    return _impl.segment_softmax_backward(indptr, _c(alpha), _c(grad_alpha))
