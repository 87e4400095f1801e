"""Compiled vs numpy kernel timings on a synthetic graph.

    python benchmarks/bench_kernels.py [--nodes 5000] [--degree 10] [--dim 64]

Reports the median of several repeats per kernel and the speedup. Also
checks the two backends agree before timing them.
"""

import argparse
import timeit

import numpy as np

from gnfbc import _pykernels as py
from gnfbc.data import SynthConfig, generate_synthetic

try:
    from gnfbc import _ckernels as cy
except ImportError:
    cy = None


def cases(ds, dim, rng):
    g = ds.graph
    a = g.normalized
    s = g.with_self_loops
    h = rng.standard_normal((g.n_nodes, dim))
    h2 = rng.standard_normal((g.n_nodes, dim))
    scores = rng.standard_normal(s.nnz)
    alpha = py.segment_softmax(s.indptr, scores)
    p = rng.random((g.n_nodes, 4))
    w = rng.random(g.n_nodes)
    return {
        "spmm": lambda k: k.spmm(a.indptr, a.indices, a.data, h),
        "edge_dot": lambda k: k.edge_dot(s.indptr, s.indices, h, h2),
        "segment_softmax": lambda k: k.segment_softmax(s.indptr, scores),
        "segment_softmax_backward": lambda k: k.segment_softmax_backward(s.indptr, alpha, scores),
        "segment_sum": lambda k: k.segment_sum(s.indptr, scores),
        "scatter_sum": lambda k: k.scatter_sum(s.indices, scores, g.n_nodes),
        "neighbor_penalty": lambda k: k.neighbor_penalty(g.indptr, g.indices, w, p),
        "neighbor_penalty_grad": lambda k: k.neighbor_penalty_grad(g.indptr, g.indices, w, p),
        "dirichlet_energy": lambda k: k.dirichlet_energy(g.indptr, g.indices, ds.features),
        "blend_act": lambda k: k.blend_act(h, h2, w, True),
        "blend_act_backward": lambda k: k.blend_act_backward(h, h, h2, w, True),
    }


def _median_ms(fn, repeat, number):
    return 1e3 * float(np.median(timeit.repeat(fn, repeat=repeat, number=number))) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=5000)
    ap.add_argument("--degree", type=float, default=10.0)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--number", type=int, default=10)
    args = ap.parse_args()
    if cy is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")

    ds = generate_synthetic(SynthConfig(n_nodes=args.nodes, mean_degree=args.degree, feature_dim=args.dim, homophily=0.5))
    rng = np.random.default_rng(0)
    print(f"N={args.nodes} edges={ds.graph.num_edges} dim={args.dim}")
    print(f"{'kernel':28s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, call in cases(ds, args.dim, rng).items():
        out_c, out_p = call(cy), call(py)
        for x, y in zip(np.atleast_1d(out_c) if not isinstance(out_c, tuple) else out_c,
                        np.atleast_1d(out_p) if not isinstance(out_p, tuple) else out_p):
            np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12, err_msg=name)
        t_c = _median_ms(lambda: call(cy), args.repeat, args.number)
        t_p = _median_ms(lambda: call(py), args.repeat, args.number)
        print(f"{name:28s} {t_c:10.3f} {t_p:10.3f} {t_p / t_c:7.1f}x")


if __name__ == "__main__":
    main()
