"""Acceptance gate: one test per criterion, summarized at the end of the run."""

import json
import time

import numpy as np
import pytest

from egcn import metrics
from egcn.cli import main
from egcn.data import SynthSpec, synth_dataset
from egcn.graph import build_population_graph, graph_from_edges, normalized_laplacian, scaled_laplacian
from egcn.layers import ChebConvLayer, GatLayer, chebconv_forward, gat_forward
from egcn.model import Branch, EgcnConfig, branch_forward, build_egcn, egcn_forward
from egcn.tensor import Tensor
from egcn.training import TrainConfig, clip_gradients, cyclic_lr, global_grad_norm, run_cv, sgd_step

from conftest import random_graph_edges
from oracles import auc_pairs, chebyshev_spectral, dense_gat


def _lap(g):
    return scaled_laplacian(normalized_laplacian(g), 2.0)


@pytest.mark.acceptance("gradient correctness")
def test_gradient_correctness(capsys, record_property):
    t0 = time.perf_counter()
    code = main(["gradcheck"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    errs = [float(line.split("max rel err")[1].split()[0]) for line in out.splitlines()
            if "max rel err" in line]
    record_property("detail", f"{len(errs)} components, worst {max(errs):.2e} <= 1e-4, "
                              f"{elapsed:.1f} s < 30 s")
    assert code == 0 and len(errs) == 19
    assert max(errs) <= 1e-4 and elapsed < 30.0


@pytest.mark.acceptance("spectral oracle")
def test_spectral_oracle(record_property):
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 13))
        g = graph_from_edges(n, random_graph_edges(rng, n, rng.uniform(0.1, 0.9)))
        lap = _lap(g)
        x = Tensor(rng.standard_normal((n, 3)))
        for K in (1, 2, 5):
            layer = ChebConvLayer(3, 4, K, rng)
            layer.bias.data = rng.standard_normal((1, 4))
            ref = chebyshev_spectral(lap.matrix.to_dense(), x.data,
                                     [t.data for t in layer.theta], layer.bias.data)
            worst = max(worst, float(np.abs(chebconv_forward(x, lap, layer).data - ref).max()))
    record_property("detail", f"50 graphs x K in {{1,2,5}}, max abs diff {worst:.2e} <= 1e-8")
    assert worst <= 1e-8


@pytest.mark.acceptance("locality")
def test_locality(record_property):
    rng = np.random.default_rng(5)
    path = graph_from_edges(10, [(i, i + 1) for i in range(9)])
    lap = _lap(path)
    x = rng.standard_normal((10, 3))
    bumped = x.copy()
    bumped[9] += 3.0

    def node0_change(f):
        return float(np.abs(f(Tensor(bumped)).data[0] - f(Tensor(x)).data[0]).max())

    single = {}
    for K in range(1, 11):
        layer = ChebConvLayer(3, 3, K, rng)
        single[K] = node0_change(lambda t: chebconv_forward(t, lap, layer))
    two = {}
    for k1, k2 in [(2, 5), (5, 5), (5, 6), (4, 7)]:
        branch = Branch(3, 3, k1, k2, rng)
        two[(k1, k2)] = node0_change(lambda t: branch_forward(t, lap, branch))
    record_property("detail", "single layer: zero for K<=9, change "
                              f"{single[10]:.2e} at K=10; two layers (2,5): {two[(2, 5)]:.1f}, "
                              f"(5,6): {two[(5, 6)]:.2e}")
    assert all(single[K] == 0.0 for K in range(1, 10)) and single[10] > 0
    # receptive field (k1-1)+(k2-1) reaches hop 9 only for the last two pairs
    assert two[(2, 5)] == 0.0 and two[(5, 5)] == 0.0
    assert two[(5, 6)] > 0 and two[(4, 7)] > 0


@pytest.mark.acceptance("attention oracle")
def test_attention_oracle(record_property):
    rng = np.random.default_rng(202)
    worst_y = worst_row = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 16))
        g = graph_from_edges(n, random_graph_edges(rng, n, rng.uniform(0.0, 0.8)))
        layer = GatLayer(4, 3, rng)
        x = rng.standard_normal((n, 4))
        y, pattern, (alpha,) = gat_forward(Tensor(x), g, layer, return_attention=True)
        ref, _ = dense_gat(x, g.adjacency().to_dense(), layer.theta[0].data,
                           layer.attn_src[0].data, layer.attn_dst[0].data, 0.2)
        worst_y = max(worst_y, float(np.abs(y.data - ref).max()))
        rows = np.add.reduceat(alpha, pattern.indptr[:-1])
        worst_row = max(worst_row, float(np.abs(rows - 1.0).max()))
        assert np.all(alpha >= 0)
    record_property("detail", f"100 graphs, max abs diff {worst_y:.2e} <= 1e-10, "
                              f"row-sum error {worst_row:.2e} <= 1e-12")
    assert worst_y <= 1e-10 and worst_row <= 1e-12


@pytest.mark.acceptance("AUC oracle")
def test_auc_oracle(record_property):
    rng = np.random.default_rng(303)
    worst = 0.0
    for i in range(1000):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        levels = int(rng.integers(2, 10))
        scores = rng.integers(0, levels, n) / levels  # heavy ties
        if i % 2:
            scores = scores + rng.random(n) * (rng.random(n) < 0.5)
        worst = max(worst, abs(metrics.auc(scores, labels) - auc_pairs(scores, labels)))
    hand = metrics.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    record_property("detail", f"1000 tied sets, max diff {worst:.1e} <= 1e-12; hand case {hand!r}")
    assert worst <= 1e-12 and hand == 0.75


@pytest.mark.acceptance("optimizer/scheduler")
def test_optimizer_scheduler(record_property):
    cfg = TrainConfig(momentum=0.8, nesterov=True, weight_decay=0.0)
    theta, state = Tensor([[1.0]], requires_grad=True), [None]
    trace = []
    for _ in range(2):
        sgd_step([theta], [np.ones((1, 1))], state, 0.1, cfg)
        trace.append(theta.item())
    # scalar hand recurrence in the same floating-point order
    v1 = 0.8 * 0.0 + 1.0
    t1 = 1.0 - 0.1 * (1.0 + 0.8 * v1)
    v2 = 0.8 * v1 + 1.0
    t2 = t1 - 0.1 * (1.0 + 0.8 * v2)
    sched = TrainConfig()
    lrs = [cyclic_lr(s, sched) for s in range(4000)]
    periodic = all(lrs[s] == lrs[s + 800] for s in range(3200))
    rng = np.random.default_rng(404)
    worst_norm = 0.0
    for _ in range(100):
        params = []
        for shape in [(int(rng.integers(1, 6)), int(rng.integers(1, 6))) for _ in range(3)]:
            p = Tensor(np.zeros(shape), requires_grad=True)
            p.grad = rng.standard_normal(shape) * 10 ** rng.uniform(-3, 3)
            params.append(p)
        clip_gradients(params, 2.0)
        worst_norm = max(worst_norm, global_grad_norm(params))
    record_property("detail", f"Nesterov trace {trace[0]!r}, {trace[1]!r}; lr(0)={lrs[0]!r}, "
                              f"lr(500)={lrs[500]!r}, period 800: {periodic}; "
                              f"max post-clip norm {worst_norm!r}")
    assert trace == [t1, t2]
    assert trace[0] == 0.82 and abs(trace[1] - 0.576) <= 1e-15
    assert lrs[0] == 1e-7 and lrs[500] == 1e-3 and periodic
    assert worst_norm <= 2.0


@pytest.mark.slow
@pytest.mark.acceptance("shape fidelity at full scale")
def test_full_scale(tmp_path, record_property):
    ds = synth_dataset(SynthSpec())
    assert ds.n == 870 and ds.dims == [4000, 1200, 6]
    model = build_egcn(EgcnConfig())
    g = build_population_graph(ds.site_labels)
    out = egcn_forward(model, ds.tensors, g, _lap(g), training=True, rng=np.random.default_rng(0))
    row_err = float(np.abs(np.exp(out.data).sum(axis=1) - 1).max())
    t0 = time.perf_counter()
    code = main(["train", "--synth", "--seed", "0", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    report = json.loads((tmp_path / "report.json").read_text())
    tested = sorted(i for f in report["folds"] for i in f["test_indices"])
    epochs = {len(f["history"]) for f in report["folds"]}
    record_property("detail", f"output {out.shape}, row-sum error {row_err:.1e}; 5 folds x "
                              f"{epochs.pop()} epochs in {elapsed / 60:.1f} min < 30 min; "
                              f"every subject tested once: {tested == list(range(870))}")
    assert out.shape == (870, 2) and row_err <= 1e-12
    assert code == 0 and elapsed < 30 * 60
    assert tested == list(range(870)) and len(report["folds"]) == 5


@pytest.mark.slow
@pytest.mark.acceptance("learning sanity")
def test_learning_sanity(record_property):
    mcfg = EgcnConfig(modality_dims=[4000, 1200, 6])
    cfg = TrainConfig(seed=7)
    signal = run_cv(synth_dataset(SynthSpec(n_subjects=200, signal_strength=5.0, seed=7)), cfg, mcfg)
    null = run_cv(synth_dataset(SynthSpec(n_subjects=200, signal_strength=0.0, seed=7)), cfg, mcfg)
    a, n = signal.aggregate, null.aggregate
    record_property("detail", f"signal 5: acc {a['acc_mean']:.3f} >= 0.90, auc {a['auc_mean']:.3f} "
                              f">= 0.95; signal 0: pooled acc {n['pooled_acc']:.3f} in [0.35, 0.65]")
    assert a["acc_mean"] >= 0.90 and a["auc_mean"] >= 0.95
    assert 0.35 <= n["pooled_acc"] <= 0.65


@pytest.mark.slow
@pytest.mark.acceptance("ablation harness")
def test_ablation_harness(tmp_path, capsys, record_property):
    base = ["train", "--synth", "--n", "100", "--signal", "1.5", "--seed", "3", "--epochs", "60"]
    variants = {"wo_gat": ["--no-gat"], "w_gat": [], "w_gat_wo_hpt": ["--hpt-profile", "plain"],
                "w_gat_w_hpt": ["--hpt-profile", "paper"]}
    reports = []
    for name, extra in variants.items():
        out = tmp_path / name
        assert main([*base, *extra, "--out", str(out)]) == 0
        reports.append(str(out / "report.json"))
    capsys.readouterr()
    assert main(["summary", *reports]) == 0
    table = capsys.readouterr().out.splitlines()
    labels = [json.loads(open(r).read())["variant"] for r in reports]
    record_property("detail", "four invocations -> " + " | ".join(labels))
    assert labels == ["EGCN w/o GAT", "EGCN w GAT", "EGCN w GAT w/o HPT", "EGCN w GAT w HPT"]
    assert len(table) == 4 and all(line.startswith(lab) for line, lab in zip(table, labels))
    with_gat = json.loads(open(reports[1]).read())["manifest"]["model_config"]
    without = json.loads(open(reports[0]).read())["manifest"]["model_config"]
    assert with_gat["use_gat"] and not without["use_gat"]


@pytest.mark.acceptance("determinism")
def test_determinism(tmp_path, record_property):
    argv = ["train", "--synth", "--n", "60", "--signal", "2", "--seed", "11", "--epochs", "20"]
    assert main([*argv, "--out", str(tmp_path / "a")]) == 0
    assert main([*argv, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    record_property("detail", f"two seeded runs, report.json {len(a)} bytes, identical: {a == b}")
    assert a == b
