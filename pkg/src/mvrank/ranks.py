"""Randomized univariate ranks, PIT values and rank histograms."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .errors import InvalidInputError


@dataclass(frozen=True)
class RankOutcome:
    rank: int
    ties_broken: int = 0
    skipped: bool = False


def _check_finite(values, what="input"):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"non-finite value in {what}")
    return arr


def randomized_rank(z0, members, rng) -> RankOutcome:
    """Rank of ``z0`` among ``z0, members`` with ties broken at random.

    The rank is ``1 + #{z_i < z0} + W`` where ``W`` is uniform on
    ``{0, ..., N}`` and ``N`` is the number of members equal to ``z0``.
    """
    z0 = float(_check_finite(z0, "observation"))
    members = _check_finite(members, "members").ravel()
    if members.size < 1:
        raise InvalidInputError("need at least one member")
    below = int(np.count_nonzero(members < z0))
    ties = int(np.count_nonzero(members == z0))
    w = int(rng.integers(0, ties + 1)) if ties else 0
    return RankOutcome(rank=1 + below + w, ties_broken=ties)


def randomized_ranks(values, rng):
    """Vectorized :func:`randomized_rank` for a block of cases.

    ``values`` has shape ``(n, M + 1)`` with the observation in column 0.
    One tie draw is consumed per case whether or not it has ties, so the
    random stream position does not depend on the data.
    """
    values = np.asarray(values, dtype=np.float64)
    obs = values[:, :1]
    members = values[:, 1:]
    below = np.count_nonzero(members < obs, axis=1)
    ties = np.count_nonzero(members == obs, axis=1)
    w = np.floor(rng.random(values.shape[0]) * (ties + 1)).astype(np.int64)
    return 1 + below + w, ties


@dataclass
class RankHistogram:
    """Counts of observation ranks ``1..M+1``.

    ``bin_counts[r - 1]`` holds the count of rank ``r``; skipped cases are
    counted in ``skipped`` and in ``total`` but in no bin.
    """

    n_bins: int
    prerank: str = ""
    seed: int | None = None
    bin_counts: np.ndarray = field(default=None)
    skipped: int = 0
    total: int = 0

    def __post_init__(self):
        if self.n_bins < 2:
            raise InvalidInputError("a rank histogram needs at least two bins")
        if self.bin_counts is None:
            self.bin_counts = np.zeros(self.n_bins, dtype=np.int64)
        else:
            self.bin_counts = np.asarray(self.bin_counts, dtype=np.int64)
            if self.bin_counts.shape != (self.n_bins,):
                raise InvalidInputError("bin_counts length must equal n_bins")

    @property
    def m(self) -> int:
        return self.n_bins - 1

    @property
    def n_ranked(self) -> int:
        return self.total - self.skipped

    def add_ranks(self, ranks, skipped=None):
        """Accumulate an array of ranks; entries flagged in ``skipped`` are not binned."""
        ranks = np.asarray(ranks, dtype=np.int64).ravel()
        if skipped is None:
            skipped = np.zeros(ranks.shape, dtype=bool)
        skipped = np.asarray(skipped, dtype=bool).ravel()
        kept = ranks[~skipped]
        if kept.size and (kept.min() < 1 or kept.max() > self.n_bins):
            raise InvalidInputError(f"rank outside 1..{self.n_bins}")
        self.bin_counts += np.bincount(kept - 1, minlength=self.n_bins)
        self.skipped += int(skipped.sum())
        self.total += int(ranks.size)
        return self

    def merge(self, other: "RankHistogram") -> "RankHistogram":
        if other.n_bins != self.n_bins:
            raise InvalidInputError("cannot merge histograms with different bin counts")
        return RankHistogram(
            n_bins=self.n_bins,
            prerank=self.prerank,
            seed=self.seed,
            bin_counts=self.bin_counts + other.bin_counts,
            skipped=self.skipped + other.skipped,
            total=self.total + other.total,
        )

    def relative_frequencies(self):
        n = self.n_ranked
        return self.bin_counts / n if n else np.zeros(self.n_bins)

    def to_dict(self) -> dict:
        return {
            "prerank": self.prerank,
            "m_plus_1": self.n_bins,
            "counts": [int(c) for c in self.bin_counts],
            "skipped": int(self.skipped),
            "total": int(self.total),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RankHistogram":
        hist = cls(
            n_bins=int(data["m_plus_1"]),
            prerank=data.get("prerank", ""),
            seed=data.get("seed"),
            bin_counts=np.asarray(data["counts"], dtype=np.int64),
            skipped=int(data.get("skipped", 0)),
            total=int(data["total"]),
        )
        if int(hist.bin_counts.sum()) + hist.skipped != hist.total:
            raise InvalidInputError("histogram counts do not add up to total")
        return hist

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin", "count"])
        for r, c in enumerate(self.bin_counts, start=1):
            writer.writerow([r, int(c)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, prerank: str = "", seed=None) -> "RankHistogram":
        rows = list(csv.DictReader(io.StringIO(text)))
        counts = np.asarray([int(r["count"]) for r in rows], dtype=np.int64)
        return cls(
            n_bins=len(counts),
            prerank=prerank,
            seed=seed,
            bin_counts=counts,
            total=int(counts.sum()),
        )


def accumulate(histogram: RankHistogram, outcome: RankOutcome) -> RankHistogram:
    """Add one outcome to ``histogram`` in place and return it."""
    if outcome.skipped:
        histogram.skipped += 1
    else:
        if not 1 <= outcome.rank <= histogram.n_bins:
            raise InvalidInputError(
                f"rank {outcome.rank} outside 1..{histogram.n_bins}"
            )
        histogram.bin_counts[outcome.rank - 1] += 1
    histogram.total += 1
    return histogram


def chi_square_flatness(histogram: RankHistogram) -> float:
    """Pearson chi-square distance of the bin counts from a flat histogram."""
    n = histogram.n_ranked
    if n <= 0:
        raise InvalidInputError("histogram has no ranked cases")
    expected = n / histogram.n_bins
    obs = histogram.bin_counts.astype(np.float64)
    return float(((obs - expected) ** 2).sum() / expected)


def flatness_pvalue(histogram: RankHistogram) -> float:
    """Upper-tail chi-square p-value with ``M`` degrees of freedom."""
    return float(chi2.sf(chi_square_flatness(histogram), histogram.n_bins - 1))


def randomized_pit(y, cdf_at, left_limit_at, rng) -> float:
    """Randomized probability integral transform ``F(y-) + V (F(y) - F(y-))``."""
    upper = float(cdf_at(y))
    lower = float(left_limit_at(y))
    if not (0.0 <= lower <= 1.0 and 0.0 <= upper <= 1.0):
        raise InvalidInputError("CDF values must lie in [0, 1]")
    if lower > upper:
        raise InvalidInputError("left limit exceeds CDF value")
    if upper == lower:
        return upper
    return lower + float(rng.random()) * (upper - lower)


def ecdf_pit(y, sample, rng):
    """Randomized PIT of ``y`` under the empirical CDF of ``sample``.

    ``y`` may be an array; ``sample`` is then broadcast against it with the
    sample along the last axis.
    """
    y = np.asarray(y, dtype=np.float64)
    sample = np.asarray(sample, dtype=np.float64)
    n = sample.shape[-1]
    below = np.count_nonzero(sample < y[..., None], axis=-1)
    at = np.count_nonzero(sample == y[..., None], axis=-1)
    lower = below / n
    upper = (below + at) / n
    return lower + rng.random(np.shape(lower)) * (upper - lower)


def chi2_critical(n_bins: int, level: float = 0.001) -> float:
    return float(chi2.isf(level, n_bins - 1))
