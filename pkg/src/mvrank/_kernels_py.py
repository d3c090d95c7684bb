"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def dim_rank_stats(pool):
    pool = np.asarray(pool, dtype=np.float64)
    n, m1, _ = pool.shape
    order = np.argsort(pool, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, m1 + 1)[None, :, None], axis=1)
    srt = np.take_along_axis(pool, order, axis=1)
    ties = (np.diff(srt, axis=1) == 0).any(axis=(1, 2))
    ranks = ranks.astype(np.float64)
    rank_sum = ranks.sum(axis=2)
    depth_sum = ((m1 - ranks) * (ranks - 1)).sum(axis=2)
    return rank_sum, depth_sum, ties


def dominance_counts(pool):
    pool = np.asarray(pool, dtype=np.float64)
    n, m1, _ = pool.shape
    out = np.empty((n, m1), dtype=np.int64)
    for i in range(m1):
        out[:, i] = (pool <= pool[:, i : i + 1, :]).all(axis=2).sum(axis=1)
    return out


def pairwise_distances(pool):
    pool = np.asarray(pool, dtype=np.float64)
    n, m1, _ = pool.shape
    out = np.zeros((n, m1, m1))
    for i in range(m1):
        diff = pool[:, i + 1 :, :] - pool[:, i : i + 1, :]
        dist = np.sqrt(np.einsum("nkj,nkj->nk", diff, diff))
        out[:, i, i + 1 :] = dist
        out[:, i + 1 :, i] = dist
    return out


def lag_variogram(x, h):
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1]
    diff = x[:, : d - h] - x[:, h:]
    return np.einsum("nj,nj->n", diff, diff) / (2.0 * (d - h))


def grid_variogram(fields, a, b):
    fields = np.asarray(fields, dtype=np.float64)
    _, p, q = fields.shape
    i0, i1 = max(0, -a), min(p, p - a)
    j0, j1 = max(0, -b), min(q, q - b)
    diff = fields[:, i0:i1, j0:j1] - fields[:, i0 + a : i1 + a, j0 + b : j1 + b]
    npairs = (i1 - i0) * (j1 - j0)
    return np.einsum("nij,nij->n", diff, diff) / (2.0 * npairs)
