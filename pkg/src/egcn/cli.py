"""Command-line entry point: ``egcn {train,evaluate,gradcheck,graph-stats,synth,summary}``.

Exit codes: 0 success, 1 bad input, 2 numeric failure or irreproducible
evaluation, 3 gradient check failure, 64 usage error.
"""

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, replace

import numpy as np

from . import __version__, gradsuite, kernels, metrics
from .data import (DEFAULT_MODALITIES, DataError, SynthSpec, assemble_dataset, load_sites_csv,
                   standardize, synth_dataset, write_dataset)
from .graph import build_population_graph
from .model import EgcnConfig, build_egcn, checkpoint_dict, model_from_checkpoint
from .tensor import NonFiniteError
from .training import (HPT_PROFILES, TrainConfig, TrainingError, build_laplacian, evaluate,
                       fold_seed, run_cv)

log = logging.getLogger("egcn")

EXIT_INPUT, EXIT_NUMERIC, EXIT_GRADCHECK, EXIT_USAGE = 1, 2, 3, 64
REPORT_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims(text):
    try:
        dims = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError("widths must be positive")
    return dims


def _add_data_flags(p):
    g = p.add_argument_group("data")
    for name in DEFAULT_MODALITIES:
        g.add_argument(f"--{name}", metavar="CSV", help=f"{name} feature matrix")
    g.add_argument("--sites", metavar="CSV")
    g.add_argument("--labels", metavar="CSV")
    g.add_argument("--synth", action="store_true", help="generate a synthetic dataset instead")
    g.add_argument("--n", type=int, default=870, help="synthetic subject count")
    g.add_argument("--signal", type=float, default=1.0, help="synthetic class mean shift")
    g.add_argument("--dims", type=_dims, default=[4000, 1200, 6], help="synthetic widths")
    g.add_argument("--n-sites", type=int, default=20, help="synthetic site count")


def build_parser():
    parser = _Parser(prog="egcn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"egcn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="stratified k-fold training")
    _add_data_flags(t)
    t.add_argument("--folds", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--no-gat", action="store_true")
    t.add_argument("--hpt-profile", choices=sorted(HPT_PROFILES), default=None,
                   help="optimizer profile (default: paper, unlabeled)")
    t.add_argument("--val-frac", type=float, default=0.0)
    t.add_argument("--standardize", action="store_true")
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--history", action="store_true", help="write per-epoch CSVs")

    e = sub.add_parser("evaluate", help="re-score a fold checkpoint")
    e.add_argument("checkpoint")
    _add_data_flags(e)
    e.add_argument("--seed", type=int, default=0, help="synthetic data seed")
    e.add_argument("--out", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--component", action="append", choices=sorted(gradsuite.CHECKS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")

    s = sub.add_parser("graph-stats", help="population graph statistics")
    s.add_argument("--sites", required=True)
    s.add_argument("--out")

    y = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    y.add_argument("--n", type=int, default=870)
    y.add_argument("--signal", type=float, default=1.0)
    y.add_argument("--dims", type=_dims, default=[4000, 1200, 6])
    y.add_argument("--n-sites", type=int, default=20)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--sidecar", action="store_true", help="also write binary .bin sidecars")
    y.add_argument("--out", required=True)

    m = sub.add_parser("summary", help="tabulate report JSON files")
    m.add_argument("reports", nargs="+")
    m.add_argument("--out")
    return parser


# -- helpers -------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_data(args):
    """Return (dataset, provenance) from --synth or the five file flags."""
    if args.synth:
        spec = SynthSpec(n_subjects=args.n, modality_dims=list(args.dims), n_sites=args.n_sites,
                         signal_strength=args.signal, seed=args.seed)
        return synth_dataset(spec), {"synth": asdict(spec)}
    paths = {name: getattr(args, name) for name in DEFAULT_MODALITIES}
    missing = [f"--{k}" for k, v in {**paths, "sites": args.sites, "labels": args.labels}.items() if not v]
    if missing:
        raise UsageError(f"missing {' '.join(missing)} (or pass --synth)")
    ds = assemble_dataset(paths, args.sites, args.labels)
    digests = {}
    for p in [*paths.values(), args.sites, args.labels]:
        digests[os.path.basename(p)] = _sha256(p)
        if os.path.exists(p + ".bin"):
            digests[os.path.basename(p) + ".bin"] = _sha256(p + ".bin")
    return ds, {"files": digests}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def variant_label(no_gat, hpt_profile):
    if no_gat:
        return "EGCN w/o GAT"
    if hpt_profile is None:
        return "EGCN w GAT"
    return "EGCN w GAT w HPT" if hpt_profile == "paper" else "EGCN w GAT w/o HPT"


def _fmt_row(variant, agg):
    return (f"{variant:<22} ACC {100 * agg['acc_mean']:6.2f}% ± {100 * agg['acc_std']:5.2f}  "
            f"AUC {agg['auc_mean']:.4f} ± {agg['auc_std']:.4f}  "
            f"(pooled ACC {100 * agg['pooled_acc']:6.2f}%, AUC {agg['pooled_auc']:.4f})")


# -- commands ------------------------------------------------------------------

def cmd_train(args):
    started = time.time()
    ds, provenance = _load_data(args)
    profile = args.hpt_profile or "paper"
    cfg = TrainConfig.from_profile(profile, epochs=args.epochs, folds=args.folds, seed=args.seed,
                                   val_frac=args.val_frac, standardize=args.standardize,
                                   jobs=args.jobs)
    mcfg = EgcnConfig(modality_dims=ds.dims, hidden_dim=args.hidden, use_gat=not args.no_gat,
                      seed=args.seed)
    variant = variant_label(args.no_gat, args.hpt_profile)
    log.info("%s: n=%d dims=%s folds=%d epochs=%d", variant, ds.n, ds.dims, cfg.folds, cfg.epochs)
    report = run_cv(ds, cfg, mcfg)
    os.makedirs(args.out, exist_ok=True)

    manifest = {
        "artifact_version": __version__,
        "seed": args.seed,
        "train_config": asdict(cfg),
        "model_config": asdict(mcfg),
        "inputs": provenance,
        "subjects": ds.n,
    }
    doc = {"format_version": REPORT_VERSION, "manifest": manifest, "variant": variant,
           **report.to_dict()}
    _write_json(os.path.join(args.out, "report.json"), doc)

    train_ids = None
    for fold in report.folds:
        model = build_egcn(replace(mcfg, seed=fold_seed(cfg.seed, fold.fold_id)))
        model.load_state(fold.state)
        test_ids = [ds.subject_ids[i] for i in fold.test_indices]
        train_ids = sorted(set(ds.subject_ids) - set(test_ids))
        extra = {
            "variant": variant,
            "fold_id": fold.fold_id,
            "best_epoch": fold.best_epoch,
            "subject_ids": list(ds.subject_ids),
            "site_labels": list(ds.site_labels),
            "test_ids": test_ids,
            "standardize_ids": train_ids if cfg.standardize else None,
            "metrics": {"accuracy": fold.test_accuracy, "auc": fold.test_auc, "nll": fold.test_nll},
        }
        _write_json(os.path.join(args.out, f"fold{fold.fold_id}.ckpt.json"),
                    checkpoint_dict(model, extra))
        _write_roc(os.path.join(args.out, f"roc_fold{fold.fold_id}.csv"), fold.roc_points)
        if args.history:
            with open(os.path.join(args.out, f"history_fold{fold.fold_id}.csv"), "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "val_acc", "lr"])
                w.writeheader()
                for row in fold.history:
                    w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    idx = np.concatenate([f.test_indices for f in report.folds])
    scores = np.concatenate([f.test_scores for f in report.folds])
    metrics.write_roc_csv(metrics.roc_curve(scores, ds.labels[idx]),
                          os.path.join(args.out, "roc_pooled.csv"))
    # timestamps live here so report.json stays byte-reproducible
    _write_json(os.path.join(args.out, "manifest.json"), {
        **manifest,
        "variant": variant,
        "report_sha256": _sha256(os.path.join(args.out, "report.json")),
        "kernel_backend": kernels.BACKEND,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "wall_seconds": round(time.time() - started, 3),
    })
    print(_fmt_row(variant, report.aggregate))
    return 0


def _write_roc(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for thr, fpr, tpr in rows:
            w.writerow(["inf" if thr is None else repr(thr), repr(fpr), repr(tpr)])


def cmd_evaluate(args):
    model, doc = model_from_checkpoint(args.checkpoint)
    ds, _ = _load_data(args)
    ds = ds.aligned_to(doc["subject_ids"])
    if ds.dims != list(model.config.modality_dims):
        raise DataError(f"dimension mismatch: data widths {ds.dims}, checkpoint expects "
                        f"{list(model.config.modality_dims)}")
    if doc.get("standardize_ids"):
        pos = {s: i for i, s in enumerate(ds.subject_ids)}
        ds = standardize(ds, [pos[s] for s in doc["standardize_ids"]])
    graph = build_population_graph(ds.site_labels)
    lap = build_laplacian(graph, model.config.lambda_max)
    pos = {s: i for i, s in enumerate(ds.subject_ids)}
    idx = np.array([pos[s] for s in doc["test_ids"]], dtype=np.int64)
    res = evaluate(model, ds.tensors, graph, lap, ds.labels, idx)
    got = {"accuracy": res["accuracy"], "auc": res["auc"], "nll": res["nll"]}
    recorded = doc.get("metrics", {})
    same = all(_bit_equal(got[k], recorded.get(k)) for k in got)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "evaluation.json"),
                {"checkpoint_sha256": _sha256(args.checkpoint), "metrics": got,
                 "recorded": recorded, "matches_recorded": same})
    print(f"accuracy {got['accuracy']!r}  auc {got['auc']!r}  nll {got['nll']!r}  "
          f"matches recorded: {'yes' if same else 'no'}")
    if not same:
        print("error: metrics differ from the checkpoint's recorded values", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def _bit_equal(a, b):
    if a is None or b is None:
        return False
    if math.isnan(a) and math.isnan(b):
        return True
    return float(a).hex() == float(b).hex()


def cmd_gradcheck(args):
    started = time.time()
    results = {}
    failed = []
    for name in args.component or list(gradsuite.CHECKS):
        try:
            err = gradsuite.run_suite([name], seed=args.seed)[name]
        except NonFiniteError as exc:
            err, note = float("nan"), f" ({exc})"
        else:
            note = ""
        ok = err <= gradsuite.TOLERANCE  # NaN compares False
        results[name] = err
        if not ok:
            failed.append(name)
        print(f"{name:<20} max rel err {err:.3e}  {'ok' if ok else 'FAIL'}{note}")
    print(f"{len(results) - len(failed)}/{len(results)} passed in {time.time() - started:.1f} s")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "gradcheck.json"),
                    {"tolerance": gradsuite.TOLERANCE, "results": results, "failed": failed})
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return 0


def cmd_graph_stats(args):
    _, sites = load_sites_csv(args.sites)
    if not sites:
        raise DataError(f"{args.sites}: no subjects")
    g = build_population_graph(sites)
    n_comp, _ = g.connected_components()
    sizes = {}
    for s in sites:
        sizes[s] = sizes.get(s, 0) + 1
    stats = {"nodes": g.n_nodes, "undirected_edges": g.n_edges, "components": n_comp,
             "site_sizes": dict(sorted(sizes.items()))}
    print(f"nodes {g.n_nodes}")
    print(f"undirected edges {g.n_edges}")
    print(f"components {n_comp}")
    for site, k in stats["site_sizes"].items():
        print(f"  {site}: {k}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "graph_stats.json"), stats)
    return 0


def cmd_synth(args):
    spec = SynthSpec(n_subjects=args.n, modality_dims=list(args.dims), n_sites=args.n_sites,
                     signal_strength=args.signal, seed=args.seed)
    paths = write_dataset(synth_dataset(spec), args.out, sidecar=args.sidecar)
    for name, p in paths["modalities"].items():
        print(f"{name}: {p}")
    print(f"sites: {paths['sites']}\nlabels: {paths['labels']}")
    return 0


def cmd_summary(args):
    lines = []
    for path in args.reports:
        with open(path) as fh:
            doc = json.load(fh)
        lines.append(_fmt_row(doc["variant"], doc["aggregate"]))
    text = "\n".join(lines)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "summary.txt"), "w") as fh:
            fh.write(text + "\n")
    return 0


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck,
            "graph-stats": cmd_graph_stats, "synth": cmd_synth, "summary": cmd_summary}


def main(argv=None):
    level = os.environ.get("EGCN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"egcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, NonFiniteError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
