"""Optimization and the cross-validated, transductive training protocol."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import metrics, ops
from .data import standardize
from .graph import build_population_graph, normalized_laplacian, scaled_laplacian
from .model import build_egcn, egcn_forward, input_bases
from .tensor import NonFiniteError, Tape, backward, no_grad

log = logging.getLogger(__name__)

nll_loss = ops.nll_loss

HPT_PROFILES = {
    # tuned settings used throughout the experiments
    "paper": dict(use_scheduler=True, momentum=0.8, nesterov=True, weight_decay=1.0),
    # untuned baseline: fixed lr, common momentum, no decay
    "plain": dict(use_scheduler=False, momentum=0.9, nesterov=False, weight_decay=0.0),
}


class TrainingError(RuntimeError):
    """A fold failed numerically; the message carries the fold diagnostic."""


@dataclass
class TrainConfig:
    epochs: int = 200
    lr_base: float = 1e-7
    lr_peak: float = 1e-3
    momentum: float = 0.8
    nesterov: bool = True
    weight_decay: float = 1.0  # large on purpose: this is the published setting
    clip_norm: float = 2.0
    step_up: int = 500
    step_down: int = 300
    use_scheduler: bool = True
    folds: int = 5
    seed: int = 0
    hpt_profile: str = "paper"
    val_frac: float = 0.0
    standardize: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.folds < 2:
            raise ValueError("need epochs >= 1 and folds >= 2")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not 0.0 <= self.val_frac < 1.0:
            raise ValueError("val_frac must be in [0, 1)")
        if self.hpt_profile not in HPT_PROFILES:
            raise ValueError(f"unknown hpt profile {self.hpt_profile!r}")

    @classmethod
    def from_profile(cls, name="paper", **overrides):
        return cls(hpt_profile=name, **{**HPT_PROFILES[name], **overrides})


# -- optimizer pieces ----------------------------------------------------

def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if not math.isfinite(total):
        raise NonFiniteError("clip_gradients", "gradient norm is not finite")
    if total <= max_norm:
        return 1.0
    s = max_norm / total
    live = [p for p in params if p.grad is not None]
    originals = [p.grad for p in live]
    while True:
        for p, g in zip(live, originals):
            p.grad = g * s
        # rounding can leave the norm an ulp above the bound; shrink s until it holds
        if global_grad_norm(live) <= max_norm:
            return s
        s = float(np.nextafter(s, 0.0))


def global_grad_norm(params):
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))


def sgd_step(params, grads, state, lr, cfg):
    """SGD with momentum, optional Nesterov, and L2 weight decay folded into the grad.

    ``state`` is a list of velocity buffers (None before the first step) that
    is updated in place.
    """
    if not (len(params) == len(grads) == len(state)):
        raise ValueError("params, grads and state must have equal length")
    mu, wd = cfg.momentum, cfg.weight_decay
    for k, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape}")
        if wd:
            g = g + wd * p.data
        v = state[k]
        if v is None:
            v = np.zeros_like(p.data)
        elif v.shape != p.data.shape:
            raise ValueError("velocity shape mismatch")
        v = mu * v + g
        state[k] = v
        step = g + mu * v if cfg.nesterov else v
        p.data = p.data - lr * step


def cyclic_lr(step, cfg):
    """Triangular cycle between min and max of (lr_base, lr_peak)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    lo, hi = min(cfg.lr_base, cfg.lr_peak), max(cfg.lr_base, cfg.lr_peak)
    phase = step % (cfg.step_up + cfg.step_down)
    if phase < cfg.step_up:
        return lo + (hi - lo) * phase / cfg.step_up
    return hi - (hi - lo) * (phase - cfg.step_up) / cfg.step_down


def epoch_lr(epoch_index, cfg):
    return cyclic_lr(epoch_index, cfg) if cfg.use_scheduler else cfg.lr_peak


# -- splitting --------------------------------------------------------------

def stratified_kfold(labels, k, seed=0):
    """k disjoint index arrays; every class is dealt round-robin after shuffling."""
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.size == 0:
        raise ValueError("no samples")
    if k > counts.min():
        raise ValueError(f"k={k} is larger than the smallest class ({counts.min()} samples)")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        for j, i in enumerate(idx):
            folds[(offset + j) % k].append(int(i))
        offset = (offset + idx.size) % k
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def split_validation(train_idx, labels, frac, seed):
    """Carve a stratified validation subset out of the training indices."""
    rng = np.random.default_rng(seed)
    val = []
    for c in np.unique(labels[train_idx]):
        members = rng.permutation(train_idx[labels[train_idx] == c])
        val.extend(members[: int(round(frac * members.size))].tolist())
    val = np.array(sorted(val), dtype=np.int64)
    return np.setdiff1d(train_idx, val), val


@dataclass
class FoldSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def make_splits(labels, cfg):
    folds = stratified_kfold(labels, cfg.folds, cfg.seed)
    all_idx = np.arange(len(labels))
    splits = []
    for f, test in enumerate(folds):
        train = np.setdiff1d(all_idx, test)
        if cfg.val_frac > 0:
            train, val = split_validation(train, labels, cfg.val_frac, cfg.seed ^ f)
        else:
            val = test  # validation fold and test fold coincide by default
        splits.append(FoldSplit(train, val, test))
    return splits


# -- reports ------------------------------------------------------------------

def _roc_rows(points):
    return [[None if math.isinf(p.threshold) else p.threshold, p.fpr, p.tpr] for p in points]


@dataclass
class FoldReport:
    fold_id: int
    best_epoch: int
    best_val_accuracy: float
    test_accuracy: float
    test_auc: float
    test_nll: float
    roc_points: list
    history: list  # [{"epoch", "loss", "val_acc", "lr"}]
    test_indices: list
    test_scores: list
    test_predictions: list
    n_train: int
    n_val: int
    state: tuple = field(default=None, repr=False, compare=False)

    def to_dict(self):
        d = asdict(replace(self, state=None))
        d.pop("state")
        return d


@dataclass
class CvReport:
    folds: list
    aggregate: dict

    def to_dict(self):
        return {"folds": [f.to_dict() for f in self.folds], "aggregate": dict(self.aggregate)}


def aggregate(folds, labels):
    acc = np.array([f.test_accuracy for f in folds])
    auc = np.array([f.test_auc for f in folds])
    idx = np.concatenate([f.test_indices for f in folds]).astype(np.int64)
    scores = np.concatenate([f.test_scores for f in folds])
    preds = np.concatenate([f.test_predictions for f in folds])
    y = np.asarray(labels)[idx]
    return {
        "acc_mean": float(acc.mean()),
        "acc_std": float(acc.std()),
        "auc_mean": float(auc.mean()),
        "auc_std": float(auc.std()),
        "pooled_acc": metrics.confusion(preds, y).accuracy,
        "pooled_auc": metrics.auc(scores, y),
    }


# -- training -----------------------------------------------------------------

def build_laplacian(graph, lambda_max=2.0):
    return scaled_laplacian(normalized_laplacian(graph), lambda_max)


def evaluate(model, xs, graph, lap, labels, idx, bases=None):
    """Inference-mode metrics on the rows ``idx``."""
    with no_grad():
        logp = egcn_forward(model, xs, graph, lap, training=False, bases=bases).data
    idx = np.asarray(idx, dtype=np.int64)
    sub, y = logp[idx], np.asarray(labels)[idx]
    out = {
        "accuracy": metrics.accuracy(sub, y),
        "nll": metrics.nll(sub, y),
        "scores": metrics.positive_scores(sub),
        "predictions": metrics.predict(sub),
    }
    if np.unique(y).size == 2:
        out["auc"] = metrics.auc(out["scores"], y)
        out["roc"] = metrics.roc_curve(out["scores"], y)
    else:
        out["auc"], out["roc"] = float("nan"), []
    return out


def train_fold(model, dataset, graph, lap, split, cfg, fold_id=0, rng=None):
    """Train on ``split.train`` for cfg.epochs full-graph steps; keep the best epoch.

    All subjects take part in every forward pass; only the loss is masked.
    """
    n = dataset.n
    covered = np.union1d(np.union1d(split.train, split.val), split.test)
    if covered.size != n:
        raise ValueError("fold assignment must cover every node")
    if rng is None:
        rng = np.random.default_rng([cfg.seed, fold_id])
    labels = dataset.labels
    xs = dataset.tensors
    with no_grad():
        bases = input_bases(model, xs, lap)
    params = list(model.parameters().values())
    velocity = [None] * len(params)
    history = []
    best_acc, best_epoch, best_state = -1.0, 0, None
    for epoch in range(1, cfg.epochs + 1):
        lr = epoch_lr(epoch - 1, cfg)
        model.zero_grad()
        with Tape() as tape:
            logp = egcn_forward(model, xs, graph, lap, training=True, rng=rng, bases=bases)
            loss = nll_loss(logp, labels, split.train)
        if not math.isfinite(loss.item()):
            raise TrainingError(f"fold {fold_id}, epoch {epoch}: non-finite loss")
        backward(tape, loss)
        try:
            clip_gradients(params, cfg.clip_norm)
        except NonFiniteError as exc:
            raise TrainingError(f"fold {fold_id}, epoch {epoch}: {exc}") from exc
        sgd_step(params, [p.grad for p in params], velocity, lr, cfg)
        val = evaluate(model, xs, graph, lap, labels, split.val, bases)
        history.append({"epoch": epoch, "loss": loss.item(), "val_acc": val["accuracy"], "lr": lr})
        if val["accuracy"] > best_acc:
            best_acc, best_epoch, best_state = val["accuracy"], epoch, model.state()
        log.debug("fold %d epoch %d loss %.6f val_acc %.4f lr %.3g",
                  fold_id, epoch, loss.item(), val["accuracy"], lr)
    model.load_state(best_state)
    test = evaluate(model, xs, graph, lap, labels, split.test, bases)
    log.info("fold %d: best epoch %d, val acc %.4f, test acc %.4f, test auc %.4f",
             fold_id, best_epoch, best_acc, test["accuracy"], test["auc"])
    return FoldReport(
        fold_id=fold_id,
        best_epoch=best_epoch,
        best_val_accuracy=best_acc,
        test_accuracy=test["accuracy"],
        test_auc=test["auc"],
        test_nll=test["nll"],
        roc_points=_roc_rows(test["roc"]),
        history=history,
        test_indices=[int(i) for i in split.test],
        test_scores=[float(s) for s in test["scores"]],
        test_predictions=[int(p) for p in test["predictions"]],
        n_train=int(split.train.size),
        n_val=int(split.val.size),
        state=best_state,
    )


def fold_seed(seed, fold_id):
    return int(seed) ^ int(fold_id)


def run_cv(dataset, cfg, model_config):
    """Stratified k-fold CV; every subject lands in exactly one test fold."""
    if list(model_config.modality_dims) != dataset.dims:
        raise ValueError(f"model expects modality widths {model_config.modality_dims}, "
                         f"dataset has {dataset.dims}")
    graph = build_population_graph(dataset.site_labels)
    lap = build_laplacian(graph, model_config.lambda_max)
    splits = make_splits(dataset.labels, cfg)

    def one(f):
        s = fold_seed(cfg.seed, f)
        data = standardize(dataset, splits[f].train) if cfg.standardize else dataset
        model = build_egcn(replace(model_config, seed=s))
        return train_fold(model, data, graph, lap, splits[f], cfg, fold_id=f,
                          rng=np.random.default_rng([s, 1]))

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            folds = list(pool.map(one, range(cfg.folds)))
    else:
        folds = [one(f) for f in range(cfg.folds)]
    return CvReport(folds=folds, aggregate=aggregate(folds, dataset.labels))
