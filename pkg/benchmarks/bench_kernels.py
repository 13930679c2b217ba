"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from miscite import kernels
from miscite.bench import synthetic_fixture
from miscite.encoder import tokenize


def workloads():
    fx = synthetic_fixture(0)
    indptr, indices = fx.graph.self_loop_csr()
    x = np.random.default_rng(0).standard_normal((len(fx.graph.node_ids), 64))
    g = np.random.default_rng(1).standard_normal((len(indptr) - 1, 64))
    docs = [[t.encode() for t in tokenize(n.text)] for n in fx.graph.nodes.values()]
    return {
        "mean_aggregate": lambda k: k.mean_aggregate(indptr, indices, x),
        "mean_aggregate_backward": lambda k: k.mean_aggregate_backward(indptr, indices, g, x.shape[0]),
        "hash_counts": lambda k: [k.hash_counts(d, b"miscite", 256) for d in docs],
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled_kernels is None:
        print("compiled extension not built; only the fallback is available")
    impls = {"python": kernels.python_kernels, "compiled": kernels.compiled_kernels}
    print(f"{'kernel':<26}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in workloads().items():
        t = {}
        for label, mod in impls.items():
            if mod is None:
                continue
            t[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        comp = t.get("compiled")
        speed = f"{t['python'] / comp:.1f}x" if comp else "-"
        print(f"{name:<26}{t['python']:>12.3f}{(comp or float('nan')):>14.3f}{speed:>10}")


if __name__ == "__main__":
    main()
