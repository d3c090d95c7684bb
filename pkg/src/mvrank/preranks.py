"""Pre-rank functions for multivariate ensemble forecasts.

Every pre-rank maps a pool of ``M + 1`` vectors (observation first, then the
members) to ``M + 1`` real values, whose observation entry is subsequently
ranked among the member entries. Simple pre-ranks act on each vector alone;
the multivariate, average, band-depth and energy-score pre-ranks evaluate
each vector against the rest of the pool.

The workhorse is :func:`prerank_values`, which processes a block of cases
stored as an ``(n, M + 1, d)`` array. The single-case functions are thin
wrappers around it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, spatial
from .errors import ConfigurationError, InvalidInputError

KINDS = (
    "multivariate",
    "average",
    "band_depth",
    "energy_score",
    "location",
    "scale",
    "dependence",
    "fte",
    "isotropy",
)
SIMPLE_KINDS = frozenset({"location", "scale", "dependence", "fte", "isotropy"})
STANDARDIZE = ("none", "climatological", "pooled")


@dataclass
class EnsembleCase:
    """One forecast case: observation plus ``M`` members on a shared layout.

    ``grid`` is ``(p, q)`` for gridded fields (stored row-major, ``d = p * q``)
    and ``None`` for flat vectors.
    """

    observation: np.ndarray
    members: np.ndarray
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        self.observation = np.asarray(self.observation, dtype=np.float64).ravel()
        members = np.asarray(self.members, dtype=np.float64)
        if members.ndim == 1:
            members = members[:, None] if self.observation.size == 1 else members[None, :]
        self.members = members.reshape(members.shape[0], -1)
        d = self.observation.size
        if d < 1:
            raise InvalidInputError("observation must have at least one component")
        if self.members.shape[0] < 1:
            raise InvalidInputError("need at least one ensemble member")
        if self.members.shape[1] != d:
            raise InvalidInputError("members and observation differ in length")
        if self.grid is not None:
            p, q = (int(v) for v in self.grid)
            if p * q != d:
                raise InvalidInputError(f"grid {p}x{q} does not match d = {d}")
            self.grid = (p, q)
        if not (np.all(np.isfinite(self.observation)) and np.all(np.isfinite(self.members))):
            raise InvalidInputError("non-finite value in ensemble case")

    @property
    def d(self) -> int:
        return self.observation.size

    @property
    def m(self) -> int:
        return self.members.shape[0]

    @property
    def pool(self):
        return np.vstack([self.observation[None, :], self.members])


@dataclass(frozen=True)
class PreRankVector:
    obs_value: float
    member_values: np.ndarray
    skipped: bool = False


@dataclass(frozen=True)
class PreRankSpec:
    """A pre-rank function and its hyperparameters.

    ``lag_h`` is the lag of the dependence and isotropy pre-ranks. On a grid,
    the dependence pre-rank uses ``lag_vector`` when given and ``(lag_h, 0)``
    otherwise. ``threshold_t`` is the FTE threshold. ``standardize`` is one of
    ``none``, ``climatological`` (needs ``clim_mean`` and ``clim_sd``) or
    ``pooled`` (mean and standard deviation of the ``M + 1`` pooled vectors in
    each dimension).
    """

    kind: str
    lag_h: int = 1
    threshold_t: float = 0.0
    standardize: str = "none"
    clim_mean: tuple | None = None
    clim_sd: tuple | None = None
    lag_vector: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown pre-rank kind {self.kind!r}")
        if self.standardize not in STANDARDIZE:
            raise ConfigurationError(f"unknown standardization {self.standardize!r}")
        if int(self.lag_h) < 1:
            raise ConfigurationError("lag_h must be a positive integer")
        object.__setattr__(self, "lag_h", int(self.lag_h))
        object.__setattr__(self, "threshold_t", float(self.threshold_t))
        for name in ("clim_mean", "clim_sd", "lag_vector"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(np.asarray(val).ravel().tolist()))
        if self.standardize == "climatological":
            if self.clim_mean is None or self.clim_sd is None:
                raise ConfigurationError("climatological standardization needs clim_mean and clim_sd")
            if len(self.clim_mean) != len(self.clim_sd):
                raise ConfigurationError("clim_mean and clim_sd differ in length")
            if min(self.clim_sd) <= 0:
                raise ConfigurationError("climatological standard deviations must be positive")
        if self.lag_vector is not None and len(self.lag_vector) != 2:
            raise ConfigurationError("lag_vector must have two components")

    @property
    def is_simple(self) -> bool:
        return self.kind in SIMPLE_KINDS

    @property
    def name(self) -> str:
        """Stable identifier, also used to derive its random stream."""
        parts = []
        if self.kind in ("dependence", "isotropy"):
            parts.append(f"h={self.lag_h}")
        if self.kind == "dependence" and self.lag_vector is not None:
            parts.append("lag={};{}".format(*(int(v) for v in self.lag_vector)))
        if self.kind == "fte":
            parts.append(f"t={self.threshold_t:g}")
        if self.standardize != "none":
            parts.append(f"std={self.standardize}")
        return self.kind + (":" + ",".join(parts) if parts else "")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("dependence", "isotropy"):
            out["h"] = self.lag_h
        if self.lag_vector is not None:
            out["lag"] = [int(v) for v in self.lag_vector]
        if self.kind == "fte":
            out["t"] = self.threshold_t
        if self.standardize != "none":
            out["standardize"] = self.standardize
        if self.clim_mean is not None:
            out["clim_mean"] = list(self.clim_mean)
            out["clim_sd"] = list(self.clim_sd)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PreRankSpec":
        data = dict(data)
        kind = data.pop("kind")
        kwargs = {}
        for key, attr in (("h", "lag_h"), ("lag_h", "lag_h"), ("t", "threshold_t"),
                          ("threshold_t", "threshold_t"), ("standardize", "standardize"),
                          ("clim_mean", "clim_mean"), ("clim_sd", "clim_sd"),
                          ("lag", "lag_vector"), ("lag_vector", "lag_vector")):
            if key in data:
                kwargs[attr] = data.pop(key)
        if data:
            raise ConfigurationError(f"unknown parameters for {kind}: {sorted(data)}")
        return cls(kind=kind, **kwargs)

    @classmethod
    def parse(cls, text: str) -> "PreRankSpec":
        """Parse ``kind[:key=value,...]``, e.g. ``dependence:h=2`` or ``fte:t=1``."""
        text = text.strip()
        kind, _, rest = text.partition(":")
        data = {"kind": kind.strip()}
        if rest:
            for item in rest.split(","):
                key, sep, value = item.partition("=")
                if not sep:
                    raise ConfigurationError(f"malformed parameter {item!r} in {text!r}")
                key = key.strip()
                value = value.strip()
                if key in ("h", "lag_h"):
                    data["h"] = int(value)
                elif key in ("t", "threshold_t"):
                    data["t"] = float(value)
                elif key in ("std", "standardize"):
                    data["standardize"] = value
                elif key == "lag":
                    data["lag"] = [int(v) for v in value.split(";")]
                else:
                    raise ConfigurationError(f"unknown parameter {key!r} in {text!r}")
        return cls.from_dict(data)


def default_specs(grid: bool, fte_threshold: float = 1.0) -> list[PreRankSpec]:
    """All implemented pre-ranks with the settings used in the simulation studies."""
    specs = [
        PreRankSpec("multivariate"),
        PreRankSpec("average"),
        PreRankSpec("band_depth"),
        PreRankSpec("energy_score"),
        PreRankSpec("location"),
        PreRankSpec("scale"),
        PreRankSpec("dependence", lag_h=1),
        PreRankSpec("fte", threshold_t=fte_threshold),
    ]
    if grid:
        specs.append(PreRankSpec("isotropy", lag_h=1))
    return specs


# ---------------------------------------------------------------------------
# single-vector pre-ranks


def location_prerank(v) -> float:
    """Mean of the components."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size < 1:
        raise InvalidInputError("empty vector")
    return float(v.mean())


def scale_prerank(v) -> float:
    """Population variance of the components (divisor ``d``)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size < 1:
        raise InvalidInputError("empty vector")
    return float(v.var())


def dependence_prerank(v, h: int) -> float:
    """``-gamma(h) / s^2`` with the lag-``h`` empirical variogram ``gamma``.

    A constant vector has no variance and is assigned 0.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    return float(_dependence_flat(v[None, :], h)[0])


def _dependence_flat(x, h):
    x = np.ascontiguousarray(x, dtype=np.float64)
    d = x.shape[1]
    if not 1 <= h <= d - 1:
        raise InvalidInputError(f"lag must satisfy 1 <= h <= d - 1 = {d - 1}")
    gamma = kernels.lag_variogram(x, int(h))
    s2 = x.var(axis=1)
    out = np.zeros_like(gamma)
    nz = s2 > 0
    out[nz] = -gamma[nz] / s2[nz]
    return out


# ---------------------------------------------------------------------------
# ensemble-dependent pre-ranks on blocks of cases


def _tied_dim_ranks(pool_case, rng):
    """Per-dimension ranks of an ``(m1, d)`` pool with random tie-breaking.

    Within a dimension, tied values receive a uniformly random ordering, drawn
    once and shared by all vectors of the pool.
    """
    keys = rng.random(pool_case.shape)
    x = pool_case[:, None, :]
    y = pool_case[None, :, :]
    below = (y < x).sum(axis=1)
    tie_before = ((y == x) & (keys[None, :, :] < keys[:, None, :])).sum(axis=1)
    return 1 + below + tie_before


def _dim_rank_stats(pool, rng, raw=None):
    rank_sum, depth_sum, ties = raw if raw is not None else kernels.dim_rank_stats(pool)
    m1, d = pool.shape[1:]
    if ties.any():
        rank_sum = rank_sum.copy()
        depth_sum = depth_sum.copy()
        if rng is None:
            rng = np.random.default_rng()
        for c in np.flatnonzero(ties):
            r = _tied_dim_ranks(pool[c], rng).astype(np.float64)
            rank_sum[c] = r.sum(axis=1)
            depth_sum[c] = ((m1 - r) * (r - 1)).sum(axis=1)
    return rank_sum / d, depth_sum / d


def _energy_values(pool):
    m = pool.shape[1] - 1
    dist = kernels.pairwise_distances(pool)
    row = dist.sum(axis=2)
    total = row.sum(axis=1, keepdims=True)
    return row / m - (total - 2.0 * row) / (2.0 * m * m)


def standardize_pool(pool, spec: PreRankSpec):
    if spec.standardize == "none":
        return pool
    if spec.standardize == "climatological":
        mean = np.asarray(spec.clim_mean, dtype=np.float64)
        sd = np.asarray(spec.clim_sd, dtype=np.float64)
        if mean.size != pool.shape[2]:
            raise ConfigurationError("climatological statistics do not match the dimension")
        return (pool - mean) / sd
    mean = pool.mean(axis=1, keepdims=True)
    sd = pool.std(axis=1, keepdims=True)
    sd = np.where(sd > 0, sd, 1.0)
    return (pool - mean) / sd


def check_spec(spec: PreRankSpec, d: int, grid):
    """Raise :class:`ConfigurationError` if ``spec`` cannot be applied to the layout."""
    if spec.kind == "isotropy":
        if grid is None:
            raise ConfigurationError("the isotropy pre-rank needs a grid layout")
        if not spec.lag_h < min(grid):
            raise ConfigurationError(f"isotropy lag {spec.lag_h} must be below min(p, q) = {min(grid)}")
    if spec.kind == "dependence":
        if grid is None:
            if not spec.lag_h < d:
                raise ConfigurationError(f"dependence lag {spec.lag_h} must be below d = {d}")
        else:
            a, b = _grid_lag(spec)
            if not (abs(a) < grid[0] and abs(b) < grid[1]):
                raise ConfigurationError(f"dependence lag {(a, b)} does not fit a {grid[0]}x{grid[1]} grid")
    if spec.standardize == "climatological" and len(spec.clim_mean) != d:
        raise ConfigurationError("climatological statistics do not match the dimension")


def _grid_lag(spec):
    if spec.lag_vector is not None:
        return tuple(int(v) for v in spec.lag_vector)
    return (spec.lag_h, 0)


def prerank_values(pool, spec: PreRankSpec, rng=None, grid=None, cache=None):
    """Pre-rank values for a block of cases.

    Parameters
    ----------
    pool : array, shape (n, M + 1, d)
        Observation in slot 0 of axis 1, members after it.
    spec : PreRankSpec
    rng : numpy Generator
        Used only to break ties in per-dimension ranks.
    grid : (p, q) or None
    cache : dict, optional
        Shared between specs evaluated on the same block so the per-dimension
        rank statistics are computed once. Tie randomization still draws from
        each spec's own ``rng``.

    Returns
    -------
    values : array, shape (n, M + 1)
    skipped : bool array, shape (n,)
        Cases that carry no information (FTE zero for every vector).
    """
    pool = np.ascontiguousarray(pool, dtype=np.float64)
    if pool.ndim != 3 or pool.shape[1] < 2:
        raise InvalidInputError("pool must have shape (n, M + 1, d) with M >= 1")
    n, m1, d = pool.shape
    check_spec(spec, d, grid)
    x = np.ascontiguousarray(standardize_pool(pool, spec))
    skipped = np.zeros(n, dtype=bool)
    kind = spec.kind

    if kind == "multivariate":
        values = kernels.dominance_counts(x).astype(np.float64)
    elif kind in ("average", "band_depth"):
        key = ("dim_ranks", spec.standardize, spec.clim_mean)
        raw = cache.get(key) if cache is not None else None
        if raw is None:
            raw = kernels.dim_rank_stats(x)
            if cache is not None:
                cache[key] = raw
        stats = _dim_rank_stats(x, rng, raw)
        values = stats[0] if kind == "average" else stats[1]
    elif kind == "energy_score":
        values = _energy_values(x)
    elif kind == "location":
        values = x.mean(axis=2)
    elif kind == "scale":
        values = x.var(axis=2)
    elif kind == "dependence":
        if grid is None:
            values = _dependence_flat(x.reshape(n * m1, d), spec.lag_h).reshape(n, m1)
        else:
            fields = x.reshape(n * m1, *grid)
            values = spatial.dependence_spatial_batch(fields, _grid_lag(spec)).reshape(n, m1)
    elif kind == "fte":
        values = spatial.fte_batch(x, spec.threshold_t)
        skipped = np.all(values == 0, axis=1)
    elif kind == "isotropy":
        fields = x.reshape(n * m1, *grid)
        values = spatial.isotropy_batch(fields, spec.lag_h).reshape(n, m1)
    else:  # pragma: no cover - guarded by PreRankSpec
        raise ConfigurationError(kind)
    return np.asarray(values, dtype=np.float64), skipped


def apply_prerank(case: EnsembleCase, spec: PreRankSpec, rng=None) -> PreRankVector:
    """Apply ``spec`` to the observation and every member of ``case``."""
    values, skipped = prerank_values(case.pool[None], spec, rng, grid=case.grid)
    return PreRankVector(float(values[0, 0]), values[0, 1:].copy(), bool(skipped[0]))


def multivariate_rank(case: EnsembleCase) -> PreRankVector:
    """Count of pool vectors weakly dominated componentwise (itself included)."""
    return apply_prerank(case, PreRankSpec("multivariate"))


def average_rank(case: EnsembleCase, rng=None) -> PreRankVector:
    """Mean over dimensions of each vector's randomized rank in that dimension."""
    return apply_prerank(case, PreRankSpec("average"), rng)


def band_depth(case: EnsembleCase, rng=None) -> PreRankVector:
    """Mean over dimensions of ``(M + 1 - r)(r - 1)``; larger is more central."""
    return apply_prerank(case, PreRankSpec("band_depth"), rng)


def energy_score_prerank(case: EnsembleCase) -> PreRankVector:
    """Energy score of the other ``M`` vectors as an ensemble, evaluated at each vector."""
    return apply_prerank(case, PreRankSpec("energy_score"))
