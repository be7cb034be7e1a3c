# cython: language_level=3
"""Compiled hot loops: sparse embedding sum, its scatter-add adjoint, masked top-M.

Summation order is fixed (rows ascending, nonzeros in storage order) so the
results are bit-identical to the numpy fallback in ``_kernels_py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport isnan

cnp.import_array()


def embed_sum(const long long[::1] indptr, const long long[::1] indices,
              const double[::1] data, const double[:, ::1] table):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t K = table.shape[1]
    out_arr = np.zeros((n, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, p, k, j
    cdef double w
    with nogil:
        for r in range(n):
            for p in range(indptr[r], indptr[r + 1]):
                j = indices[p]
                w = data[p]
                for k in range(K):
                    out[r, k] += w * table[j, k]
    return out_arr


def embed_scatter(const long long[::1] indptr, const long long[::1] indices,
                  const double[::1] data, const double[:, ::1] grad_out,
                  Py_ssize_t n_items):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t K = grad_out.shape[1]
    out_arr = np.zeros((n_items, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, p, k, j
    cdef double w
    with nogil:
        for r in range(n):
            for p in range(indptr[r], indptr[r + 1]):
                j = indices[p]
                w = data[p]
                for k in range(K):
                    out[j, k] += w * grad_out[r, k]
    return out_arr


cdef inline bint _worse(double sa, long long ia, double sb, long long ib) nogil:
    # a ranks below b: lower score, or equal score and larger id
    return sa < sb or (sa == sb and ia > ib)


cdef void _sift_down(double* hs, long long* hi, Py_ssize_t size, Py_ssize_t pos) nogil:
    # min-heap keyed on "worst first"
    cdef Py_ssize_t child, right
    cdef double ts
    cdef long long ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        right = child + 1
        if right < size and _worse(hs[right], hi[right], hs[child], hi[child]):
            child = right
        if _worse(hs[child], hi[child], hs[pos], hi[pos]):
            ts = hs[pos]; hs[pos] = hs[child]; hs[child] = ts
            ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
            pos = child
        else:
            break


cdef void _sift_up(double* hs, long long* hi, Py_ssize_t pos) nogil:
    cdef Py_ssize_t parent
    cdef double ts
    cdef long long ti
    while pos > 0:
        parent = (pos - 1) // 2
        if _worse(hs[pos], hi[pos], hs[parent], hi[parent]):
            ts = hs[pos]; hs[pos] = hs[parent]; hs[parent] = ts
            ti = hi[pos]; hi[pos] = hi[parent]; hi[parent] = ti
            pos = parent
        else:
            break


def topk_masked(const double[:, ::1] scores, Py_ssize_t M,
                const long long[::1] ex_indptr, const long long[::1] ex_indices,
                const unsigned char[::1] allowed):
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t J = scores.shape[1]
    items_arr = np.full((n, M), -1, dtype=np.int64)
    vals_arr = np.full((n, M), -np.inf, dtype=np.float64)
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef long long[:, ::1] items = items_arr
    cdef double[:, ::1] vals = vals_arr
    cdef long long[::1] counts = counts_arr
    mark_arr = np.zeros(J, dtype=np.uint8)
    cdef unsigned char[::1] mark = mark_arr
    hs_arr = np.empty(max(M, 1), dtype=np.float64)
    hi_arr = np.empty(max(M, 1), dtype=np.int64)
    cdef double[::1] hs = hs_arr
    cdef long long[::1] hi = hi_arr
    cdef Py_ssize_t r, p, j, size, pos
    cdef double s
    with nogil:
        for r in range(n):
            for p in range(ex_indptr[r], ex_indptr[r + 1]):
                mark[ex_indices[p]] = 1
            size = 0
            for j in range(J):
                if mark[j] or not allowed[j]:
                    continue
                s = scores[r, j]
                if isnan(s):
                    continue
                if size < M:
                    hs[size] = s
                    hi[size] = j
                    _sift_up(&hs[0], &hi[0], size)
                    size += 1
                elif M > 0 and _worse(hs[0], hi[0], s, j):
                    hs[0] = s
                    hi[0] = j
                    _sift_down(&hs[0], &hi[0], size, 0)
            counts[r] = size
            # pop worst-first into the tail of the output row
            pos = size - 1
            while size > 0:
                items[r, pos] = hi[0]
                vals[r, pos] = hs[0]
                size -= 1
                hs[0] = hs[size]
                hi[0] = hi[size]
                _sift_down(&hs[0], &hi[0], size, 0)
                pos -= 1
            for p in range(ex_indptr[r], ex_indptr[r + 1]):
                mark[ex_indices[p]] = 0
    return items_arr, vals_arr, counts_arr
