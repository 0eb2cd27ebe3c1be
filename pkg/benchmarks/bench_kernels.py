"""Compare the compiled CSR kernels with the numpy fallback.

Shapes follow the default model on a synthetic 870-subject, 20-site graph.
Run: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from egcn import kernels
from egcn.graph import build_population_graph, normalized_laplacian, scaled_laplacian
from egcn.model import EgcnConfig, build_egcn, egcn_forward
from egcn.tensor import Tape, backward
from egcn import ops
from egcn.data import SynthSpec, synth_dataset


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    sites = [f"site{i % 20}" for i in range(870)]
    g = build_population_graph(sites)
    lap = scaled_laplacian(normalized_laplacian(g), 2.0).matrix
    pat = g.attention_pattern()
    ip, ix = lap.indptr, lap.indices
    pp, px = pat.indptr, pat.indices
    x32, x96 = rng.standard_normal((870, 32)), rng.standard_normal((870, 96))
    x4000 = rng.standard_normal((870, 4000))
    e = rng.standard_normal(pat.nnz)
    alpha = kernels.segment_softmax(pp, e)
    return g, {
        "spmm 870x870 @ 870x32": lambda: kernels.csr_spmm(ip, ix, lap.data, x32),
        "spmm 870x870 @ 870x4000": lambda: kernels.csr_spmm(ip, ix, lap.data, x4000),
        "spmm_t 870x870 @ 870x96": lambda: kernels.csr_spmm_t(ip, ix, lap.data, x96, 870),
        "sddmm 96-wide": lambda: kernels.csr_sddmm(pp, px, x96, x96),
        "segment_softmax": lambda: kernels.segment_softmax(pp, e),
        "segment_softmax_backward": lambda: kernels.segment_softmax_backward(pp, alpha, e),
    }


def training_step(ds, g):
    lap = scaled_laplacian(normalized_laplacian(g), 2.0)
    model = build_egcn(EgcnConfig(seed=0))
    rng = np.random.default_rng(0)

    def step():
        model.zero_grad()
        with Tape() as tape:
            out = egcn_forward(model, ds.tensors, g, lap, training=True, rng=rng)
            loss = ops.nll_loss(out, ds.labels)
        backward(tape, loss)
    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if "native" not in kernels.BACKENDS:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    g, cases = kernel_cases(np.random.default_rng(0))
    ds = synth_dataset(SynthSpec(seed=0))
    cases["full forward+backward step"] = training_step(ds, g)
    print(f"{'case':<30} {'python ms':>10} {'native ms':>10} {'speedup':>8}")
    for name, fn in cases.items():
        result = {}
        for backend in ("python", "native"):
            kernels.use_backend(backend)
            fn()  # warm-up
            result[backend] = best_of(fn, args.repeat)
        print(f"{name:<30} {1e3 * result['python']:>10.2f} {1e3 * result['native']:>10.2f} "
              f"{result['python'] / result['native']:>7.1f}x")


if __name__ == "__main__":
    main()
