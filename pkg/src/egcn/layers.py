"""Chebyshev graph convolution, graph attention, batch norm, dropout, activations.

Layers are parameter containers; the ``*_forward`` functions are the actual
computations and are what the model and the tests call.
"""

import math

import numpy as np

from . import ops
from .tensor import Tensor


def glorot(rng, fan_in, fan_out, name=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


class ChebConvLayer:
    """Filter of order K - 1: theta[k] multiplies T_k(L~) x."""

    def __init__(self, in_dim, out_dim, K, rng, bias=True):
        if K < 1:
            raise ValueError(f"K must be >= 1, got {K}")
        self.in_dim, self.out_dim, self.K = in_dim, out_dim, K
        self.theta = [glorot(rng, in_dim, out_dim, name=f"theta{k}") for k in range(K)]
        self.bias = Tensor(np.zeros((1, out_dim)), requires_grad=True, name="bias") if bias else None

    def parameters(self):
        params = {f"theta{k}": t for k, t in enumerate(self.theta)}
        if self.bias is not None:
            params["bias"] = self.bias
        return params


def chebyshev_basis(x, lap, K):
    """[T_0(L~) x, ..., T_{K-1}(L~) x] via the three-term recurrence."""
    if lap.n != x.shape[0]:
        raise ValueError(f"Laplacian has {lap.n} nodes but features have {x.shape[0]} rows")
    L = lap.matrix
    basis = [x]
    if K > 1:
        basis.append(ops.spmm(L, x))
    for _ in range(2, K):
        basis.append(ops.sub(ops.scale(ops.spmm(L, basis[-1]), 2.0), basis[-2]))
    return basis


def chebconv_forward(x, lap, layer, basis=None):
    """y = sum_k T_k(L~) x theta_k + bias.

    ``basis`` may carry a precomputed :func:`chebyshev_basis` of a constant
    input; the model uses this for the raw modality features, which never
    change between epochs.
    """
    if x is not None and x.shape[1] != layer.in_dim:
        raise ValueError(f"ChebConv expects {layer.in_dim} input features, got {x.shape[1]}")
    if basis is None:
        basis = chebyshev_basis(x, lap, layer.K)
    elif len(basis) < layer.K:
        raise ValueError("precomputed basis is shorter than K")
    y = ops.matmul(basis[0], layer.theta[0])
    for k in range(1, layer.K):
        y = ops.add(y, ops.matmul(basis[k], layer.theta[k]))
    if layer.bias is not None:
        y = ops.add_row(y, layer.bias)
    return y


class GatLayer:
    """Single-layer additive attention; heads are averaged."""

    def __init__(self, in_dim, out_dim, rng, leaky_slope=0.2, heads=1):
        if heads < 1:
            raise ValueError("heads must be >= 1")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.leaky_slope = leaky_slope
        self.heads = heads
        self.theta, self.attn_src, self.attn_dst = [], [], []
        for _ in range(heads):
            self.theta.append(glorot(rng, in_dim, out_dim, name="theta"))
            self.attn_src.append(glorot(rng, out_dim, 1, name="attn_src"))
            self.attn_dst.append(glorot(rng, out_dim, 1, name="attn_dst"))

    def parameters(self):
        params = {}
        for h in range(self.heads):
            sfx = "" if self.heads == 1 else str(h)
            params["theta" + sfx] = self.theta[h]
            params["attn_src" + sfx] = self.attn_src[h]
            params["attn_dst" + sfx] = self.attn_dst[h]
        return params


def _gat_head(x, pattern, layer, h):
    feats = ops.matmul(x, layer.theta[h])
    s_self = ops.matmul(feats, layer.attn_src[h])
    s_nbr = ops.matmul(feats, layer.attn_dst[h])
    e = ops.leaky_relu(ops.edge_scores(s_self, s_nbr, pattern), layer.leaky_slope)
    alpha = ops.segment_softmax(e, pattern)
    return ops.edge_aggregate(alpha, pattern, feats), alpha


def gat_forward(x, g, layer, return_attention=False):
    """x'_i = sum over j in N(i) + {i} of alpha_ij * theta^T x_j."""
    if x.shape[1] != layer.in_dim:
        raise ValueError(f"GAT expects {layer.in_dim} input features, got {x.shape[1]}")
    if x.shape[0] != g.n_nodes:
        raise ValueError(f"graph has {g.n_nodes} nodes but features have {x.shape[0]} rows")
    pattern = g.attention_pattern()
    outs, alphas = [], []
    for h in range(layer.heads):
        out, alpha = _gat_head(x, pattern, layer, h)
        outs.append(out)
        alphas.append(alpha)
    y = outs[0]
    for o in outs[1:]:
        y = ops.add(y, o)
    if layer.heads > 1:
        y = ops.scale(y, 1.0 / layer.heads)
    if return_attention:
        return y, pattern, [a.data[:, 0] for a in alphas]
    return y


class BatchNormLayer:
    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones((1, dim)), requires_grad=True, name="gamma")
        self.beta = Tensor(np.zeros((1, dim)), requires_grad=True, name="beta")
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}


def batchnorm_forward(x, layer, training):
    """Training: batch statistics (population variance) and a running-stat update.

    The running variance is updated with the unbiased batch variance.
    """
    if x.shape[1] != layer.dim:
        raise ValueError(f"BatchNorm expects {layer.dim} features, got {x.shape[1]}")
    if not training:
        return ops.batch_norm_infer(x, layer.gamma, layer.beta,
                                    layer.running_mean, layer.running_var, layer.eps)
    n = x.shape[0]
    if n < 2:
        raise ValueError("batch norm in training mode needs at least 2 rows")
    out, mu, var = ops.batch_norm_train(x, layer.gamma, layer.beta, layer.eps)
    m = layer.momentum
    layer.running_mean = (1 - m) * layer.running_mean + m * mu
    layer.running_var = (1 - m) * layer.running_var + m * var * (n / (n - 1))
    return out


def dropout_forward(x, p, training, rng):
    """Inverted dropout: survivors are scaled by 1 / (1 - p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return ops.mul_const(x, keep / (1.0 - p))


def relu_forward(x):
    return ops.relu(x)


def logsoftmax_forward(x):
    return ops.log_softmax(x)
