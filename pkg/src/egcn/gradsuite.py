"""Finite-difference checks for every primitive, every layer, and a toy model.

Each entry of :data:`CHECKS` builds a fresh random instance from an rng and
returns the worst relative error over all inputs/parameters it checks.
"""

import numpy as np

from . import ops
from .gradcheck import grad_check
from .graph import build_population_graph, graph_from_edges, normalized_laplacian, scaled_laplacian
from .layers import (BatchNormLayer, ChebConvLayer, GatLayer, batchnorm_forward,
                     chebconv_forward, dropout_forward, gat_forward)
from .model import EgcnConfig, build_egcn, egcn_forward
from .sparse import SparseMatrix
from .tensor import Tensor

TOLERANCE = 1e-4
STEP = 1e-5


def _param(rng, *shape, shift=0.0):
    return Tensor(rng.standard_normal(shape) + shift, requires_grad=True)


def _off_kink(rng, *shape):
    # magnitudes in [0.1, 1.1] keep every entry far from the ReLU kink
    return Tensor(rng.choice([-1.0, 1.0], size=shape) * (0.1 + rng.random(shape)), requires_grad=True)


def _weights(rng, shape):
    return Tensor(rng.standard_normal(shape))


def _reduce(y, w):
    """Scalar sum(y * w) with fixed random weights, so every output entry matters."""
    return ops.sum(ops.mul(y, w))


def _check_all(f, tensors):
    return max(grad_check(lambda _t: f(), t, STEP) for t in tensors)


def _toy_graph(rng, n=6):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
    return graph_from_edges(n, edges)


def _toy_lap(g):
    return scaled_laplacian(normalized_laplacian(g), 2.0)


# -- primitives -----------------------------------------------------------------

def check_matmul(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    w = _weights(rng, (3, 2))
    return _check_all(lambda: _reduce(ops.matmul(a, b), w), [a, b])


def check_spmm(rng):
    dense = np.where(rng.random((5, 5)) < 0.4, rng.standard_normal((5, 5)), 0.0)
    s = SparseMatrix.from_dense(dense)
    x, w = _param(rng, 5, 3), _weights(rng, (5, 3))
    return _check_all(lambda: _reduce(ops.spmm(s, x), w), [x])


def check_add_sub_mul_scale(rng):
    a, b = _param(rng, 3, 3), _param(rng, 3, 3)
    w = _weights(rng, (3, 3))
    return _check_all(
        lambda: _reduce(ops.scale(ops.mul(ops.add(a, b), ops.sub(a, b)), 1.7), w), [a, b])


def check_add_row(rng):
    a, b = _param(rng, 4, 3), _param(rng, 1, 3)
    w = _weights(rng, (4, 3))
    return _check_all(lambda: _reduce(ops.add_row(a, b), w), [a, b])


def check_mul_const(rng):
    a = _param(rng, 4, 3)
    m, w = rng.random((4, 3)), _weights(rng, (4, 3))
    return _check_all(lambda: _reduce(ops.mul_const(a, m), w), [a])


def check_relu(rng):
    a, w = _off_kink(rng, 4, 3), _weights(rng, (4, 3))
    return _check_all(lambda: _reduce(ops.relu(a), w), [a])


def check_leaky_relu(rng):
    a, w = _off_kink(rng, 4, 3), _weights(rng, (4, 3))
    return _check_all(lambda: _reduce(ops.leaky_relu(a, 0.2), w), [a])


def check_log_softmax(rng):
    a, w = _param(rng, 4, 3), _weights(rng, (4, 3))
    return _check_all(lambda: _reduce(ops.log_softmax(a), w), [a])


def check_concat_cols(rng):
    a, b = _param(rng, 3, 2), _param(rng, 3, 4)
    w = _weights(rng, (3, 6))
    return _check_all(lambda: _reduce(ops.concat_cols([a, b]), w), [a, b])


def check_nll_loss(rng):
    a = _param(rng, 5, 3)
    labels = rng.integers(0, 3, size=5)
    mask = np.array([True, False, True, True, False])
    return _check_all(lambda: ops.nll_loss(ops.log_softmax(a), labels, mask), [a])


def check_edge_ops(rng):
    g = _toy_graph(rng)
    pattern = g.attention_pattern()
    s1, s2 = _param(rng, 6, 1), _param(rng, 6, 1)
    h = _param(rng, 6, 3)
    w = _weights(rng, (6, 3))

    def f():
        alpha = ops.segment_softmax(ops.edge_scores(s1, s2, pattern), pattern)
        return _reduce(ops.edge_aggregate(alpha, pattern, h), w)

    return _check_all(f, [s1, s2, h])


def check_batch_norm_ops(rng):
    x = _param(rng, 6, 3)
    gamma, beta = _param(rng, 1, 3), _param(rng, 1, 3)
    w = _weights(rng, (6, 3))
    mean, var = rng.standard_normal((1, 3)), 0.5 + rng.random((1, 3))
    train = _check_all(lambda: _reduce(ops.batch_norm_train(x, gamma, beta, 1e-5)[0], w),
                       [x, gamma, beta])
    infer = _check_all(lambda: _reduce(ops.batch_norm_infer(x, gamma, beta, mean, var, 1e-5), w),
                       [x, gamma, beta])
    return max(train, infer)


# -- layers ---------------------------------------------------------------------

def check_chebconv(rng):
    g = _toy_graph(rng)
    lap = _toy_lap(g)
    layer = ChebConvLayer(4, 3, 3, rng)
    layer.bias.data = rng.standard_normal((1, 3))
    x, w = _param(rng, 6, 4), _weights(rng, (6, 3))
    return _check_all(lambda: _reduce(chebconv_forward(x, lap, layer), w),
                      [x, *layer.theta, layer.bias])


def check_gat(rng):
    g = _toy_graph(rng)
    layer = GatLayer(4, 3, rng)
    x, w = _param(rng, 6, 4), _weights(rng, (6, 3))
    return _check_all(lambda: _reduce(gat_forward(x, g, layer), w),
                      [x, *layer.parameters().values()])


def check_batchnorm(rng):
    layer = BatchNormLayer(3)
    layer.gamma.data = 1.0 + 0.3 * rng.standard_normal((1, 3))
    x, w = _param(rng, 6, 3), _weights(rng, (6, 3))
    return _check_all(lambda: _reduce(batchnorm_forward(x, layer, True), w),
                      [x, layer.gamma, layer.beta])


def check_dropout(rng):
    x, w = _param(rng, 6, 3), _weights(rng, (6, 3))
    seed = int(rng.integers(2**31))
    return _check_all(
        lambda: _reduce(dropout_forward(x, 0.5, True, np.random.default_rng(seed)), w), [x])


def check_relu_layer(rng):
    return check_relu(rng)


def check_logsoftmax(rng):
    return check_log_softmax(rng)


def check_egcn(rng):
    """Full model on a 6-node, 3-modality toy instance (widths 8/5/3, hidden 4)."""
    sites = ["a", "a", "b", "b", "b", "c"]
    graph = build_population_graph(sites)
    lap = _toy_lap(graph)
    cfg = EgcnConfig(modality_dims=[8, 5, 3], hidden_dim=4, k1=2, k2=3, k_head=2,
                     dropout_p=0.5, seed=int(rng.integers(2**31)))
    model = build_egcn(cfg)
    for t in model.parameters().values():
        if t.name == "bias":
            t.data = 0.1 * rng.standard_normal(t.data.shape)
    xs = [Tensor(rng.standard_normal((6, d))) for d in cfg.modality_dims]
    labels = np.array([0, 1, 0, 1, 1, 0])
    train = np.array([0, 1, 2, 4])
    seed = int(rng.integers(2**31))

    def loss():
        logp = egcn_forward(model, xs, graph, lap, training=True,
                            rng=np.random.default_rng(seed))
        return ops.nll_loss(logp, labels, train)

    return _check_all(loss, list(model.parameters().values()))


PRIMITIVES = {
    "matmul": check_matmul,
    "spmm": check_spmm,
    "elementwise": check_add_sub_mul_scale,
    "add_row": check_add_row,
    "mul_const": check_mul_const,
    "relu_op": check_relu,
    "leaky_relu": check_leaky_relu,
    "log_softmax": check_log_softmax,
    "concat_cols": check_concat_cols,
    "nll_loss": check_nll_loss,
    "edge_attention_ops": check_edge_ops,
    "batch_norm_ops": check_batch_norm_ops,
}

LAYERS = {
    "chebconv": check_chebconv,
    "gat": check_gat,
    "batchnorm": check_batchnorm,
    "dropout": check_dropout,
    "relu": check_relu_layer,
    "logsoftmax": check_logsoftmax,
    "egcn": check_egcn,
}

CHECKS = {**PRIMITIVES, **LAYERS}


def run_suite(components=None, seed=0, repeats=1):
    """Return {component: worst error}; unknown names raise KeyError."""
    names = list(CHECKS) if not components else list(components)
    results = {}
    for name in names:
        check = CHECKS[name]
        rng = np.random.default_rng([seed, names.index(name)])
        results[name] = max(check(rng) for _ in range(repeats))
    return results
