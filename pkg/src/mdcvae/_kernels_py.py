"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``.

``np.add.at`` applies updates unbuffered and in index order, which reproduces
the accumulation order of the compiled loops exactly.
"""
import numpy as np


def embed_sum(indptr, indices, data, table):
    n = len(indptr) - 1
    out = np.zeros((n, table.shape[1]), dtype=np.float64)
    if len(indices) == 0:
        return out
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, rows, data[:, None] * table[indices])
    return out


def embed_scatter(indptr, indices, data, grad_out, n_items):
    n = len(indptr) - 1
    out = np.zeros((n_items, grad_out.shape[1]), dtype=np.float64)
    if len(indices) == 0:
        return out
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, indices, data[:, None] * grad_out[rows])
    return out


def topk_masked(scores, M, ex_indptr, ex_indices, allowed):
    n, J = scores.shape
    items = np.full((n, M), -1, dtype=np.int64)
    vals = np.full((n, M), -np.inf, dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    base = allowed.astype(bool)
    ids = np.arange(J)
    for r in range(n):
        keep = base.copy()
        keep[ex_indices[ex_indptr[r]:ex_indptr[r + 1]]] = False
        keep &= ~np.isnan(scores[r])
        cand = ids[keep]
        s = scores[r, cand]
        order = np.lexsort((cand, -s))[:M]
        k = len(order)
        items[r, :k] = cand[order]
        vals[r, :k] = s[order]
        counts[r] = k
    return items, vals, counts
