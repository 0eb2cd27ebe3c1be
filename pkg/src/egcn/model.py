"""The multi-branch network: per-modality ChebConv branches, fusion, attention, head."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .layers import (BatchNormLayer, ChebConvLayer, GatLayer, batchnorm_forward,
                     chebconv_forward, chebyshev_basis, dropout_forward, gat_forward,
                     logsoftmax_forward, relu_forward)
from .tensor import Tensor

CHECKPOINT_VERSION = 1


@dataclass
class EgcnConfig:
    modality_dims: list = field(default_factory=lambda: [4000, 1200, 6])
    hidden_dim: int = 32
    n_classes: int = 2
    k1: int = 2
    k2: int = 5
    k_head: int = 2
    dropout_p: float = 0.5
    use_gat: bool = True
    gat_heads: int = 1
    leaky_slope: float = 0.2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    lambda_max: object = 2.0  # float, or "exact" for power iteration
    seed: int = 0

    def __post_init__(self):
        self.modality_dims = [int(d) for d in self.modality_dims]
        if not self.modality_dims or min(self.modality_dims) < 1:
            raise ValueError("modality_dims must be a non-empty list of positive widths")
        if self.hidden_dim < 1 or self.n_classes < 2:
            raise ValueError("hidden_dim must be >= 1 and n_classes >= 2")
        if min(self.k1, self.k2, self.k_head) < 1:
            raise ValueError("Chebyshev orders must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def input_dim(self):
        return sum(self.modality_dims)

    @property
    def fusion_dim(self):
        return self.hidden_dim * len(self.modality_dims)


class Branch:
    def __init__(self, in_dim, hidden, k1, k2, rng):
        self.cheb1 = ChebConvLayer(in_dim, hidden, k1, rng)
        self.cheb2 = ChebConvLayer(hidden, hidden, k2, rng)

    def parameters(self):
        out = {}
        for lname in ("cheb1", "cheb2"):
            for pname, t in getattr(self, lname).parameters().items():
                out[f"{lname}.{pname}"] = t
        return out


class EgcnModel:
    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        h = config.hidden_dim
        self.branches = [Branch(d, h, config.k1, config.k2, rng) for d in config.modality_dims]
        self.fusion_bn = BatchNormLayer(config.fusion_dim, config.bn_momentum, config.bn_eps)
        self.gat = (GatLayer(config.fusion_dim, config.fusion_dim, rng, config.leaky_slope,
                             config.gat_heads) if config.use_gat else None)
        self.head = ChebConvLayer(config.fusion_dim, config.n_classes, config.k_head, rng)

    def parameters(self):
        """Ordered name -> Tensor map; the order is fixed by the config."""
        out = {}
        for b, branch in enumerate(self.branches):
            for name, t in branch.parameters().items():
                out[f"branch{b}.{name}"] = t
        for name, t in self.fusion_bn.parameters().items():
            out[f"fusion_bn.{name}"] = t
        if self.gat is not None:
            for name, t in self.gat.parameters().items():
                out[f"gat.{name}"] = t
        for name, t in self.head.parameters().items():
            out[f"head.{name}"] = t
        return out

    def n_parameters(self):
        return int(sum(t.data.size for t in self.parameters().values()))

    def zero_grad(self):
        for t in self.parameters().values():
            t.zero_grad()

    def buffers(self):
        return {"fusion_bn.running_mean": self.fusion_bn.running_mean,
                "fusion_bn.running_var": self.fusion_bn.running_var}

    def state(self):
        """Deep copy of parameters and running statistics."""
        return ({k: t.data.copy() for k, t in self.parameters().items()},
                {k: v.copy() for k, v in self.buffers().items()})

    def load_state(self, state):
        params, buffers = state
        current = self.parameters()
        for name, t in current.items():
            if name not in params:
                raise KeyError(f"missing parameter {name}")
            value = np.asarray(params[name], dtype=np.float64)
            if value.shape != t.data.shape:
                raise ValueError(f"dimension mismatch in {name}: expected {t.data.shape}, "
                                 f"got {value.shape}")
            t.data = value.copy()
        extra = set(params) - set(current)
        if extra:
            raise KeyError(f"unexpected parameters: {sorted(extra)}")
        for name in ("running_mean", "running_var"):
            value = np.asarray(buffers[f"fusion_bn.{name}"], dtype=np.float64)
            if value.shape != (1, self.fusion_bn.dim):
                raise ValueError(f"dimension mismatch in fusion_bn.{name}: expected "
                                 f"{(1, self.fusion_bn.dim)}, got {value.shape}")
            setattr(self.fusion_bn, name, value.copy())


def build_egcn(config):
    return EgcnModel(config)


def branch_forward(x_m, lap, branch, training=True, basis=None):
    """h1 = ReLU(Cheb1(x)), h2 = ReLU(Cheb2(h1)); returns h1 + h2."""
    h1 = relu_forward(chebconv_forward(x_m, lap, branch.cheb1, basis=basis))
    h2 = relu_forward(chebconv_forward(h1, lap, branch.cheb2))
    return ops.add(h1, h2)


def input_bases(model, xs, lap):
    """Precompute the first-layer Chebyshev bases of constant modality inputs."""
    return [chebyshev_basis(x, lap, b.cheb1.K) for x, b in zip(xs, model.branches)]


def egcn_forward(model, xs, graph, lap, training=False, rng=None, bases=None):
    """Full forward pass returning n x n_classes log-probabilities."""
    cfg = model.config
    if len(xs) != len(model.branches):
        raise ValueError(f"expected {len(model.branches)} modalities, got {len(xs)}")
    n = graph.n_nodes
    for m, (x, d) in enumerate(zip(xs, cfg.modality_dims)):
        if x.shape[0] != n:
            raise ValueError(f"modality {m} has {x.shape[0]} rows, graph has {n} nodes")
        if x.shape[1] != d:
            raise ValueError(f"modality {m} has width {x.shape[1]}, model expects {d}")
    if lap.n != n:
        raise ValueError(f"Laplacian has {lap.n} nodes, graph has {n}")
    if training and cfg.dropout_p > 0 and rng is None:
        raise ValueError("training mode with dropout needs an rng")
    if bases is None:
        bases = [None] * len(xs)
    hs = [branch_forward(x, lap, b, training, basis)
          for x, b, basis in zip(xs, model.branches, bases)]
    z = ops.concat_cols(hs)
    z = batchnorm_forward(z, model.fusion_bn, training)
    z = dropout_forward(z, cfg.dropout_p, training, rng)
    if model.gat is not None:
        z = ops.add(z, gat_forward(z, graph, model.gat))
    logits = chebconv_forward(z, lap, model.head)
    return logsoftmax_forward(logits)


def _encode(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}


def _decode(obj):
    return np.array(obj["values"], dtype=np.float64).reshape(obj["shape"])


def checkpoint_dict(model, extra=None):
    params, buffers = model.state()
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "parameters": {k: _encode(v) for k, v in params.items()},
        "running_stats": {k: _encode(v) for k, v in buffers.items()},
    }
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(model, path, extra=None):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model, extra), fh)


def model_from_checkpoint(doc):
    """Rebuild a model from a checkpoint document (dict or path)."""
    if not isinstance(doc, dict):
        with open(doc) as fh:
            doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r} "
                         f"(this build reads {CHECKPOINT_VERSION})")
    model = build_egcn(EgcnConfig(**doc["config"]))
    params = {k: _decode(v) for k, v in doc["parameters"].items()}
    buffers = {k: _decode(v) for k, v in doc["running_stats"].items()}
    model.load_state((params, buffers))
    return model, doc


__all__ = ["EgcnConfig", "EgcnModel", "Tensor", "build_egcn", "branch_forward",
           "egcn_forward", "input_bases", "save_checkpoint", "model_from_checkpoint"]
