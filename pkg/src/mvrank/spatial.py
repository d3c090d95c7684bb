"""Pre-rank functions for gridded fields.

Fields are ``(p, q)`` arrays with unit spacing. A lag ``(a, b)`` pairs grid
point ``(i, j)`` with ``(i + a, j + b)``; the first index is treated as the
horizontal direction. Batch variants take stacks of shape ``(n, p, q)``.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import InvalidInputError


def _as_fields(fields):
    arr = np.ascontiguousarray(fields, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InvalidInputError("fields must have shape (p, q) or (n, p, q)")
    return arr


def _check_lag(shape, lag):
    p, q = shape[-2:]
    a, b = (int(v) for v in lag)
    if not (abs(a) < p and abs(b) < q):
        raise InvalidInputError(f"lag {(a, b)} leaves no grid pairs in a {p}x{q} field")
    return a, b


def fte_prerank(x, t: float) -> float:
    """Fraction of components strictly above ``t``."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.count_nonzero(x > t) / x.size)


def fte_batch(values, t: float):
    """FTE along the trailing axes: ``(n, m1, d)`` -> ``(n, m1)``."""
    values = np.asarray(values, dtype=np.float64)
    flat = values.reshape(values.shape[:2] + (-1,))
    return np.count_nonzero(flat > t, axis=-1) / flat.shape[-1]


def spatial_variogram(field, lag) -> float:
    """Half the mean squared increment over all pairs separated by ``lag``."""
    arr = _as_fields(field)
    a, b = _check_lag(arr.shape, lag)
    return float(kernels.grid_variogram(arr, a, b)[0])


def variogram_batch(fields, lag):
    arr = _as_fields(fields)
    a, b = _check_lag(arr.shape, lag)
    return kernels.grid_variogram(arr, a, b)


def _contrast(g1, g2):
    den = g1 + g2
    out = np.zeros_like(den)
    nz = den != 0
    out[nz] = ((g1[nz] - g2[nz]) / den[nz]) ** 2
    return out


def isotropy_batch(fields, h: int):
    """Isotropy pre-rank of each field in an ``(n, p, q)`` stack."""
    arr = _as_fields(fields)
    p, q = arr.shape[1:]
    h = int(h)
    if not 1 <= h < min(p, q):
        raise InvalidInputError(f"isotropy lag must satisfy 1 <= h < min(p, q) = {min(p, q)}")
    g_h0 = kernels.grid_variogram(arr, h, 0)
    g_0h = kernels.grid_variogram(arr, 0, h)
    g_hh = kernels.grid_variogram(arr, h, h)
    g_mh = kernels.grid_variogram(arr, -h, h)
    return -(_contrast(g_h0, g_0h) + _contrast(g_hh, g_mh))


def isotropy_prerank(field, h: int) -> float:
    """Negative sum of the squared normalized axis and diagonal variogram contrasts.

    Lies in ``[-2, 0]``; a contrast whose two variograms are both zero counts as 0.
    """
    return float(isotropy_batch(field, h)[0])


def dependence_spatial_batch(fields, lag):
    arr = _as_fields(fields)
    a, b = _check_lag(arr.shape, lag)
    gamma = kernels.grid_variogram(arr, a, b)
    s2 = arr.reshape(arr.shape[0], -1).var(axis=1)
    out = np.zeros_like(gamma)
    nz = s2 > 0
    out[nz] = -gamma[nz] / s2[nz]
    return out


def dependence_prerank_spatial(field, lag) -> float:
    """``-gamma(lag) / s^2`` for a field; a constant field gives 0."""
    return float(dependence_spatial_batch(field, lag)[0])
