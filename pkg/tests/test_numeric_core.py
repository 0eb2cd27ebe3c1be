import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egcn import ops
from egcn.gradcheck import grad_check
from egcn.sparse import SparseMatrix
from egcn.tensor import NonFiniteError, Tape, Tensor, backward


def test_matmul_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ops.matmul(Tensor(np.eye(2)), a).data, a.data)
    assert np.array_equal(ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.ones((3, 2)))).data,
                          np.zeros((2, 2)))
    # hand expansion: [1*5+2*7, 1*6+2*8; 3*5+4*7, 3*6+4*8]
    out = ops.matmul(a, Tensor([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_output_is_an_error():
    big = Tensor([[1e200]])
    with pytest.raises(NonFiniteError):
        ops.matmul(big, big)
    with pytest.raises(NonFiniteError):
        Tensor([[np.nan]])


def test_sparse_examples(backend, rng):
    x = Tensor(rng.standard_normal((5, 3)))
    assert np.array_equal(ops.spmm(SparseMatrix.empty(5), x).data, np.zeros((5, 3)))
    assert np.array_equal(ops.spmm(SparseMatrix.identity(5), x).data, x.data)
    dense = np.where(rng.random((5, 5)) < 0.3, rng.standard_normal((5, 5)), 0.0)
    s = SparseMatrix.from_dense(dense)
    np.testing.assert_allclose(ops.spmm(s, x).data, dense @ x.data, rtol=0, atol=1e-12)


def test_sparse_shape_mismatch():
    with pytest.raises(ValueError):
        ops.spmm(SparseMatrix.identity(4), Tensor(np.ones((5, 2))))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 50), d=st.integers(1, 6), fill=st.floats(0.0, 1.0), seed=st.integers(0, 2**32 - 1))
def test_spmm_matches_dense(n, d, fill, seed):
    r = np.random.default_rng(seed)
    dense = np.where(r.random((n, n)) < fill, r.standard_normal((n, n)), 0.0)
    x = r.standard_normal((n, d))
    s = SparseMatrix.from_dense(dense)
    np.testing.assert_allclose(s.dot(x), dense @ x, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.tdot(x), dense.T @ x, rtol=0, atol=1e-12)


def test_csr_canonicalization_sums_duplicates():
    s = SparseMatrix.from_coo([1, 0, 1, 1], [2, 1, 0, 2], [1.0, 2.0, 3.0, 4.0], (2, 3))
    assert s.indptr.tolist() == [0, 1, 3]
    assert s.indices.tolist() == [1, 0, 2]
    assert s.data.tolist() == [2.0, 3.0, 5.0]
    with pytest.raises(ValueError):
        SparseMatrix([0, 2], [1, 0], [1.0, 1.0], (1, 2))  # unsorted row


def test_backward_examples():
    x = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(x)
    backward(tape, loss)
    assert np.array_equal(x.grad, np.ones((2, 2)))

    x = Tensor([[3.0]], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    backward(tape, loss)
    assert np.array_equal(x.grad, [[6.0]])


def test_backward_errors():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ops.scale(x, 2.0)
    with pytest.raises(ValueError, match="1x1"):
        backward(tape, y)
    with Tape() as other:
        z = ops.sum(x)
    with pytest.raises(ValueError, match="not produced on this tape"):
        backward(tape, z)
    backward(other, z)


def test_unreachable_params_keep_zero_grad():
    a = Tensor([[1.0, 2.0]], requires_grad=True)
    b = Tensor([[5.0, 6.0]], requires_grad=True)
    with Tape() as tape:
        ops.sum(b)  # recorded but not part of the loss
        loss = ops.sum(ops.scale(a, 3.0))
    backward(tape, loss)
    assert np.array_equal(a.grad, [[3.0, 3.0]])
    assert np.array_equal(b.grad, [[0.0, 0.0]])


def test_tape_is_topologically_ordered():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        b = ops.relu(a)
        c = ops.matmul(b, a)
        ops.sum(ops.add(c, b))
    position = {id(node.output): k for k, node in enumerate(tape.ops)}
    for k, node in enumerate(tape.ops):
        for t in node.inputs:
            if id(t) in position:
                assert position[id(t)] < k


def test_no_tape_means_no_recording():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    out = ops.relu(a)
    assert not out.requires_grad and out._tape is None


def _composite_loss(x, w, lap, labels):
    h = ops.relu(ops.matmul(ops.spmm(lap, x), w))
    return ops.nll_loss(ops.log_softmax(h), labels)


def test_backward_is_deterministic(rng):
    lap = SparseMatrix.from_dense(np.array([[0, -0.5, 0], [-0.5, 0, -0.7], [0, -0.7, 0]]))
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    grads = []
    for _ in range(2):
        x.zero_grad(), w.zero_grad()
        with Tape() as tape:
            loss = _composite_loss(x, w, lap, [0, 1, 1])
        backward(tape, loss)
        grads.append((x.grad.copy(), w.grad.copy()))
    assert grads[0][0].tobytes() == grads[1][0].tobytes()
    assert grads[0][1].tobytes() == grads[1][1].tobytes()


def test_adjoint_linearity(rng):
    x = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 3)))

    def f(t):
        return ops.sum(ops.mul(ops.matmul(t, w), t))

    def g(t):
        return ops.sum(ops.log_softmax(ops.matmul(w, t)))

    def grad_of(fn):
        x.zero_grad()
        with Tape() as tape:
            loss = fn(x)
        backward(tape, loss)
        return x.grad.copy()

    alpha, beta = 0.7, -1.3
    combined = grad_of(lambda t: ops.add(ops.scale(f(t), alpha), ops.scale(g(t), beta)))
    np.testing.assert_allclose(combined, alpha * grad_of(f) + beta * grad_of(g), rtol=0, atol=1e-10)


def test_grad_check_examples(rng):
    x = Tensor([[3.0]], requires_grad=True)
    assert grad_check(lambda t: ops.sum(ops.mul(t, t)), x, 1e-5) <= 1e-8

    row = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
    assert grad_check(lambda t: ops.nll_loss(ops.log_softmax(t), [2]), row, 1e-5) <= 1e-6


def test_composite_chebconv_relu_nll_matches_fd(rng):
    lap = SparseMatrix.from_dense(np.array([[0, -0.5, 0], [-0.5, 0, -0.7], [0, -0.7, 0]]))
    x = Tensor(rng.standard_normal((3, 4)) + 0.1, requires_grad=True)
    w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    assert grad_check(lambda t: _composite_loss(t, w, lap, [0, 1, 1]), x) <= 1e-4
    assert grad_check(lambda t: _composite_loss(x, t, lap, [0, 1, 1]), w) <= 1e-4


def test_grad_check_rejects_non_finite():
    x = Tensor([[1.0]], requires_grad=True)

    def f(t):
        if t.data[0, 0] > 1.0:
            return Tensor._wrap(np.array([[np.inf]]), False)
        return ops.sum(t)

    with pytest.raises(NonFiniteError):
        grad_check(f, x)
