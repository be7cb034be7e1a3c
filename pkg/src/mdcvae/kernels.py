"""Backend selection for the hot kernels.

The compiled Cython core is used when it was built; otherwise the numpy
fallback is imported. Set ``MDCVAE_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("MDCVAE_PURE_PYTHON", "") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def embed_sum(indptr, indices, data, table, impl=None):
    """Row-wise weighted sum of embedding rows: ``out[r] = sum_p data[p] * table[indices[p]]``."""
    impl = impl or _impl
    return impl.embed_sum(_i64(indptr), _i64(indices), _f64(data), _f64(table))


def embed_scatter(indptr, indices, data, grad_out, n_items, impl=None):
    """Adjoint of :func:`embed_sum` with respect to ``table``."""
    impl = impl or _impl
    return impl.embed_scatter(_i64(indptr), _i64(indices), _f64(data), _f64(grad_out), int(n_items))


def topk_masked(scores, M, ex_indptr, ex_indices, allowed=None, impl=None):
    """Top-``M`` items per row by descending score, ties broken by ascending id.

    Items listed in the CSR-style exclusion lists and items with
    ``allowed[j] == 0`` are never returned. Rows with fewer than ``M``
    candidates are padded with id ``-1``; ``counts`` holds the real length.
    """
    impl = impl or _impl
    scores = _f64(np.atleast_2d(scores))
    if allowed is None:
        allowed = np.ones(scores.shape[1], dtype=np.uint8)
    allowed = np.ascontiguousarray(allowed, dtype=np.uint8)
    return impl.topk_masked(scores, int(M), _i64(ex_indptr), _i64(ex_indices), allowed)
