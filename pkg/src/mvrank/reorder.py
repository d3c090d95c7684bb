"""Copula reordering of per-dimension quantiles (ECC and the Schaake shuffle).

Quantiles are ``(d, M)`` arrays sorted along the last axis. A template is a
``(d, M)`` array whose per-dimension ranks decide which quantile each output
member receives. Output members are returned as ``(M, d)``.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from .errors import ConfigurationError, InvalidInputError


def quantile_levels(m: int):
    """Evenly spaced levels ``(i - 0.5) / M`` for ``i = 1..M``."""
    if m < 1:
        raise InvalidInputError("M must be positive")
    return (np.arange(1, m + 1) - 0.5) / m


def margin_quantiles(ppf, m: int):
    """``(d, M)`` quantiles from a vectorized inverse cdf.

    ``ppf`` maps a level array of shape ``(M,)`` to ``(d, M)`` (or ``(M,)`` for
    a single dimension).
    """
    q = np.atleast_2d(np.asarray(ppf(quantile_levels(m)), dtype=np.float64))
    return np.sort(q, axis=1)


def template_ranks(template, rng):
    """0-based per-dimension ranks of ``template`` with random tie-breaking.

    One uniform key per template entry decides the order within tied groups,
    so the result is a deterministic function of ``(template, rng state)``.
    """
    t = np.asarray(template, dtype=np.float64)
    keys = rng.random(t.shape)
    order = np.lexsort((keys, t), axis=-1)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(t.shape[-1])[None, :].repeat(t.shape[0], 0), axis=-1)
    return ranks


def reorder(quantiles, template, rng):
    """Members ``(M, d)`` whose dimension ``j`` copula follows ``template[j]``.

    Member ``m`` in dimension ``j`` gets the quantile whose order index equals
    the rank of ``template[j, m]`` within row ``j``.
    """
    q = np.asarray(quantiles, dtype=np.float64)
    t = np.asarray(template, dtype=np.float64)
    if q.ndim == 1:
        q = q[None]
    if t.ndim == 1:
        t = t[None]
    if q.shape != t.shape:
        raise ConfigurationError(f"quantiles {q.shape} and template {t.shape} differ in shape")
    if np.isnan(t).any():
        raise InvalidInputError("template contains NaN")
    if np.any(np.diff(q, axis=1) < 0):
        raise InvalidInputError("quantiles must be nondecreasing in every dimension")
    ranks = template_ranks(t, rng)
    out = np.take_along_axis(q, ranks, axis=1)
    return out.T.copy()


def ecc(quantiles, raw_members, rng):
    """Ensemble copula coupling: the raw ``(M, d)`` ensemble is the template."""
    raw = np.asarray(raw_members, dtype=np.float64)
    return reorder(quantiles, raw.T, rng)


def schaake_template(archive, m: int, rng):
    """Pick ``m`` historical vectors from ``archive`` ``(n, d)`` without replacement.

    Returns the ``(d, m)`` template in the order drawn.
    """
    arr = np.asarray(archive, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError("archive must have shape (n, d)")
    if arr.shape[0] < m:
        raise InvalidInputError(f"archive has {arr.shape[0]} vectors, need at least {m}")
    idx = rng.choice(arr.shape[0], size=m, replace=False)
    return arr[idx].T.copy()


def schaake_shuffle(quantiles, archive, rng):
    q = np.atleast_2d(np.asarray(quantiles, dtype=np.float64))
    template = schaake_template(archive, q.shape[1], rng)
    return reorder(q, template, rng)


def margins_preserved(quantiles, members) -> bool:
    """True when every output dimension is exactly the input quantile multiset."""
    q = np.atleast_2d(np.asarray(quantiles, dtype=np.float64))
    out = np.asarray(members, dtype=np.float64)
    if out.shape != q.shape[::-1]:
        return False
    return bool(np.array_equal(np.sort(q, axis=1), np.sort(out.T, axis=1)))


def rank_fidelity(template, members) -> bool:
    """True when output ranks match template ranks in every dimension (tie-free template)."""
    t = np.atleast_2d(np.asarray(template, dtype=np.float64))
    out = np.asarray(members, dtype=np.float64).T
    rt = stats.rankdata(t, axis=1, method="ordinal")
    ro = stats.rankdata(out, axis=1, method="ordinal")
    return bool(np.array_equal(rt, ro))
