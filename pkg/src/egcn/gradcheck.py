"""Central finite-difference gradient checking."""

import numpy as np

from .tensor import NonFiniteError, Tape, Tensor, backward, no_grad


def grad_check(f, x, step=1e-5):
    """Compare the tape gradient of scalar ``f(x)`` against central differences.

    ``f`` maps a Tensor to a 1x1 Tensor and must be deterministic (re-seed any
    randomness inside it). ``x`` must require grad; its data is perturbed in
    place and restored. Returns max |analytic - numeric| / max(1, |analytic|).
    """
    if not x.requires_grad:
        raise ValueError("grad_check needs a tensor with requires_grad=True")
    x.zero_grad()
    with Tape() as tape:
        out = f(x)
    backward(tape, out)
    analytic = x.grad.copy()

    numeric = np.empty_like(analytic)
    flat = x.data.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = f(x).item()
            flat[k] = orig - step
            lo = f(x).item()
            flat[k] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteError("grad_check", f"entry {k}")
            numeric.reshape(-1)[k] = (hi - lo) / (2 * step)
    x.zero_grad()
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0


def grad_check_params(f, params, step=1e-5):
    """``grad_check`` applied to each tensor in ``params``; returns the worst error.

    ``f`` is called with no arguments and closes over the parameters.
    """
    worst = 0.0
    for p in params:
        worst = max(worst, grad_check(lambda _p: f(), p, step))
    return worst


__all__ = ["grad_check", "grad_check_params", "Tensor"]
