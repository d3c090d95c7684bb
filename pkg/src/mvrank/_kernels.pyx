# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a numpy twin in :mod:`mvrank._kernels_py` with the
same signature and results; :mod:`mvrank.kernels` picks one at import.
"""
import numpy as np

from libc.math cimport sqrt


def dim_rank_stats(const double[:, :, ::1] pool):
    """Per-dimension rank statistics for every vector of every case.

    ``pool`` has shape ``(n, m1, d)``. Ranks are taken within each dimension
    among the ``m1`` vectors of a case (1 = smallest). Returns the per-vector
    sum of ranks, the per-vector sum of ``(m1 - r) * (r - 1)`` and a per-case
    flag marking whether any dimension contained tied values (the sums are
    then invalid for that case and must be recomputed with tie randomization).
    """
    cdef Py_ssize_t n = pool.shape[0], m1 = pool.shape[1], d = pool.shape[2]
    cdef Py_ssize_t c, i, j, k
    cdef double v, r
    cdef Py_ssize_t[::1] idx = np.empty(max(m1, 1), dtype=np.intp)
    cdef double[::1] val = np.empty(max(m1, 1), dtype=np.float64)
    rank_sum_arr = np.zeros((n, m1), dtype=np.float64)
    depth_sum_arr = np.zeros((n, m1), dtype=np.float64)
    ties_arr = np.zeros(n, dtype=np.bool_)
    cdef double[:, ::1] rank_sum = rank_sum_arr
    cdef double[:, ::1] depth_sum = depth_sum_arr
    cdef unsigned char[::1] ties = ties_arr.view(np.uint8)
    with nogil:
        for c in range(n):
            for j in range(d):
                # insertion sort of (value, index) pairs, stable
                for i in range(m1):
                    v = pool[c, i, j]
                    k = i
                    while k > 0 and val[k - 1] > v:
                        val[k] = val[k - 1]
                        idx[k] = idx[k - 1]
                        k -= 1
                    val[k] = v
                    idx[k] = i
                for k in range(m1):
                    if k > 0 and val[k - 1] == val[k]:
                        ties[c] = 1
                    r = k + 1
                    rank_sum[c, idx[k]] += r
                    depth_sum[c, idx[k]] += (m1 - r) * (r - 1)
    return rank_sum_arr, depth_sum_arr, ties_arr


def dominance_counts(const double[:, :, ::1] pool):
    """Number of vectors in each case weakly dominated by each vector.

    ``out[c, i] = #{k : pool[c, k, :] <= pool[c, i, :] componentwise}``,
    counting ``k == i``.
    """
    cdef Py_ssize_t n = pool.shape[0], m1 = pool.shape[1], d = pool.shape[2]
    cdef Py_ssize_t c, i, k, j
    cdef long cnt
    cdef bint dominated
    out_arr = np.zeros((n, m1), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    for c in range(n):
        for i in range(m1):
            cnt = 0
            for k in range(m1):
                dominated = True
                for j in range(d):
                    if pool[c, k, j] > pool[c, i, j]:
                        dominated = False
                        break
                if dominated:
                    cnt += 1
            out[c, i] = cnt
    return out_arr


def pairwise_distances(const double[:, :, ::1] pool):
    """Euclidean distance matrix between the vectors of each case."""
    cdef Py_ssize_t n = pool.shape[0], m1 = pool.shape[1], d = pool.shape[2]
    cdef Py_ssize_t c, i, k, j
    cdef double acc, diff
    out_arr = np.zeros((n, m1, m1), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for c in range(n):
        for i in range(m1):
            for k in range(i + 1, m1):
                acc = 0.0
                for j in range(d):
                    diff = pool[c, i, j] - pool[c, k, j]
                    acc += diff * diff
                acc = sqrt(acc)
                out[c, i, k] = acc
                out[c, k, i] = acc
    return out_arr


def lag_variogram(const double[:, ::1] x, Py_ssize_t h):
    """Empirical variogram at lag ``h`` along the last axis of ``x``."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t c, j
    cdef double acc, diff
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for c in range(n):
        acc = 0.0
        for j in range(d - h):
            diff = x[c, j] - x[c, j + h]
            acc += diff * diff
        out[c] = acc / (2.0 * (d - h))
    return out_arr


def grid_variogram(const double[:, :, ::1] fields, Py_ssize_t a, Py_ssize_t b):
    """Empirical variogram of ``(n, p, q)`` fields at grid lag ``(a, b)``.

    Either lag component may be negative.
    """
    cdef Py_ssize_t n = fields.shape[0], p = fields.shape[1], q = fields.shape[2]
    cdef Py_ssize_t c, i, j
    cdef Py_ssize_t i0 = -a if a < 0 else 0
    cdef Py_ssize_t i1 = p - a if a > 0 else p
    cdef Py_ssize_t j0 = -b if b < 0 else 0
    cdef Py_ssize_t j1 = q - b if b > 0 else q
    cdef double acc, diff
    cdef Py_ssize_t npairs = (i1 - i0) * (j1 - j0)
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for c in range(n):
        acc = 0.0
        for i in range(i0, i1):
            for j in range(j0, j1):
                diff = fields[c, i, j] - fields[c, i + a, j + b]
                acc += diff * diff
        out[c] = acc / (2.0 * npairs)
    return out_arr
