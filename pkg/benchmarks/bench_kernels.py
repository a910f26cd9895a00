"""Compare the compiled HNSW kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--n 5000] [--dim 64] [--queries 500]

Reports build time, knn and threshold-search throughput, and recall@10
against an exact scan for each available backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from catcache.index import HNSWIndex, IndexParams
from catcache.kernels import has_compiled


def clustered(n, d, rng, clusters=16):
    centres = rng.normal(size=(clusters, d))
    x = centres[rng.integers(0, clusters, n)] + 0.7 * rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def bench(backend, data, queries, params):
    idx = HNSWIndex(params, backend=backend)
    t0 = time.perf_counter()
    for i, v in enumerate(data):
        idx.insert(v, i)
    build = time.perf_counter() - t0

    truth = np.argsort(-(queries @ data.T), axis=1)[:, :10]
    t0 = time.perf_counter()
    found = [[e for e, _ in idx.knn_search(q, 10)] for q in queries]
    knn = time.perf_counter() - t0
    recall = np.mean([len(set(f) & set(t)) / 10 for f, t in zip(found, truth)])

    t0 = time.perf_counter()
    for q in queries:
        idx.threshold_search(q, 0.9)
    thr = time.perf_counter() - t0
    return build, knn, thr, recall


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--queries", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    data = clustered(args.n, args.dim, rng)
    queries = clustered(args.queries, args.dim, rng)
    params = IndexParams(dimension=args.dim)

    backends = ["python"] + (["compiled"] if has_compiled() else [])
    results = {}
    print(f"n={args.n} dim={args.dim} queries={args.queries} M={params.m} "
          f"efC={params.ef_construction} efS={params.ef_search}")
    print(f"{'backend':10s} {'build s':>9s} {'knn q/s':>9s} {'thr q/s':>9s} {'recall@10':>10s}")
    for b in backends:
        build, knn, thr, recall = bench(b, data, queries, params)
        results[b] = build
        print(f"{b:10s} {build:9.2f} {args.queries / knn:9.0f} {args.queries / thr:9.0f} {recall:10.4f}")
    if len(results) == 2:
        print(f"build speedup (compiled vs python): {results['python'] / results['compiled']:.1f}x")


if __name__ == "__main__":
    main()
