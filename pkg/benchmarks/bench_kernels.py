"""Time the compiled kernels against the numpy fallback on recommender-sized inputs.

    python benchmarks/bench_kernels.py [--users 500] [--items 17000] [--k 100]

Also checks that both backends return identical arrays.
"""
import argparse
import timeit

import numpy as np

from mdcvae import _kernels_py, kernels

try:
    from mdcvae import _kernels as compiled
except ImportError:
    compiled = None


def make_batch(rng, n_users, n_items, per_user):
    counts = rng.poisson(per_user, n_users) + 1
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    indices = np.concatenate([np.sort(rng.choice(n_items, c, replace=False)) for c in counts]).astype(np.int64)
    return indptr, indices, np.ones(len(indices))


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(f"  {label:8s} {best * 1e3:9.2f} ms")
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--users", type=int, default=500)
    ap.add_argument("--items", type=int, default=17000)
    ap.add_argument("--k", type=int, default=100)
    ap.add_argument("--per-user", type=float, default=40.0)
    ap.add_argument("--top", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    indptr, indices, data = make_batch(rng, args.users, args.items, args.per_user)
    table = rng.standard_normal((args.items, args.k))
    grad = rng.standard_normal((args.users, args.k))
    scores = rng.standard_normal((args.users, args.items))
    allowed = np.ones(args.items, dtype=np.uint8)

    cases = {
        "embed_sum": lambda impl: kernels.embed_sum(indptr, indices, data, table, impl=impl),
        "embed_scatter": lambda impl: kernels.embed_scatter(indptr, indices, data, grad, args.items, impl=impl),
        "topk_masked": lambda impl: kernels.topk_masked(scores, args.top, indptr, indices, allowed, impl=impl),
    }
    print(f"users={args.users} items={args.items} k={args.k} nnz={len(indices)} default backend={kernels.BACKEND}")
    for name, call in cases.items():
        print(name)
        t_py = bench("python", lambda: call(_kernels_py), args.repeat)
        if compiled is None:
            print("  cython   (extension not built)")
            continue
        t_c = bench("cython", lambda: call(compiled), args.repeat)
        a, b = call(_kernels_py), call(compiled)
        same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
        print(f"  speedup  {t_py / t_c:9.2f}x   identical={same}")


if __name__ == "__main__":
    main()
