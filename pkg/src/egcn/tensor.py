"""Define-by-run reverse-mode autodiff over dense 2-D float64 arrays.

Operations are recorded on the innermost active :class:`Tape` (one stack per
thread), and only when at least one input requires a gradient. Outside any
tape every operation is a plain numpy computation.

    >>> x = Tensor([[3.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = ops.sum(ops.mul(x, x))
    >>> backward(tape, loss)
    >>> x.grad
    array([[6.]])
"""

import threading

import numpy as np


class NonFiniteError(FloatingPointError):
    """A recorded computation produced NaN or Inf."""

    def __init__(self, op, detail=""):
        self.op = op
        super().__init__(f"non-finite values produced by {op}" + (f": {detail}" if detail else ""))


class Tensor:
    """Dense 2-D float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_index")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"Tensor must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("Tensor", name or "initial data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._tape = None
        self._index = -1

    @classmethod
    def _wrap(cls, arr, requires_grad):
        # internal constructor: arr already a finite float64 2-D array
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._tape = None
        t._index = -1
        return t

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self):
        return self.data

    def item(self):
        if self.data.shape != (1, 1):
            raise ValueError("item() needs a 1x1 tensor")
        return float(self.data[0, 0])

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # operator sugar; the real definitions live in egcn.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, other)
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class _Node:
    __slots__ = ("name", "inputs", "output", "adjoint")

    def __init__(self, name, inputs, output, adjoint):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.adjoint = adjoint


_state = threading.local()


def _stack():
    s = getattr(_state, "stack", None)
    if s is None:
        s = _state.stack = []
    return s


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager; nested tapes shadow outer ones. A tape is
    single-use: build it during one forward pass, then call :func:`backward`.
    """

    def __init__(self):
        self.ops = []
        self._done = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.ops)

    def op_names(self):
        return [node.name for node in self.ops]


def current_tape():
    s = _stack()
    return s[-1] if s else None


class no_grad:
    """Suspend recording inside the block, even if a tape is active."""

    def __enter__(self):
        self._saved = list(_stack())
        _stack().clear()

    def __exit__(self, *exc):
        _stack().extend(self._saved)
        return False


def record(name, out, inputs, adjoint):
    """Wrap ``out`` as a Tensor and log the op on the active tape.

    ``adjoint(g)`` receives d(loss)/d(out) and returns one array (or None) per
    input. It is only invoked for ops whose output received a gradient.
    """
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(name)
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, needs)
    if needs:
        result._tape = tape
        result._index = len(tape.ops)
        tape.ops.append(_Node(name, tuple(inputs), result, adjoint))
    return result


def backward(tape, loss):
    """Populate ``.grad`` of every requires-grad tensor reachable from ``loss``.

    Gradients accumulate into leaves (parameters); call ``zero_grad`` between
    steps. Intermediate tensors on the tape receive their gradient as well.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"loss must be 1x1, got {loss.shape}")
    if loss._tape is not tape:
        raise ValueError("loss was not produced on this tape")
    if tape._done:
        raise RuntimeError("backward already ran on this tape")
    tape._done = True

    adj = {id(loss): np.ones((1, 1))}
    leaves = {}
    for node in reversed(tape.ops[: loss._index + 1]):
        g = adj.pop(id(node.output), None)
        if g is None:
            continue
        node.output.grad = g
        grads = node.adjoint(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise AssertionError(f"{node.name}: adjoint shape {gi.shape} != input {t.shape}")
            key = id(t)
            if t._tape is tape:
                prev = adj.get(key)
                adj[key] = gi if prev is None else prev + gi
            else:
                prev = leaves.get(key)
                leaves[key] = (t, gi if prev is None else prev[1] + gi)
    for t, g in leaves.values():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad = t.grad + g
