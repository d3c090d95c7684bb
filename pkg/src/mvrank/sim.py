"""Simulated ensemble forecasts with exponential covariance structure.

Observations come from a zero-mean Gaussian vector (``mvn``) or a Gaussian
random field on a ``p x q`` unit grid (``grf``) with covariance
``sigma2 * exp(-dist / tau)`` and ``sigma2 = tau = 1``. Members come from
the same family with mis-specified mean shift, variance, correlation length
or geometric anisotropy.

Cases are produced in fixed-size blocks; each block draws from its own
random stream derived from ``(seed, block index)``, so any block can be
regenerated on its own and results do not depend on processing order.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .errors import ConfigurationError
from .preranks import EnsembleCase
from .ranks import flatness_pvalue

BLOCK_SIZE = 250
_CASE_STREAM = 0x5EED


@dataclass(frozen=True)
class ScenarioConfig:
    """Forecast scenario; the truth is always ``mu = 0, sigma2 = 1, tau = 1``, isotropic.

    ``anisotropy_on`` says which side the vertical rescaling by
    ``anisotropy_factor`` applies to: ``"forecast"`` or ``"truth"``.
    """

    family: str = "mvn"
    d: int = 10
    p: int = 30
    q: int = 30
    mu_shift: float = 0.0
    sigma2: float = 1.0
    tau: float = 1.0
    anisotropy_factor: float = 1.0
    anisotropy_on: str = "forecast"
    m: int = 20
    n_cases: int = 10_000
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.family not in ("mvn", "grf"):
            raise ConfigurationError(f"unknown family {self.family!r}")
        if self.family == "mvn" and self.d < 2:
            raise ConfigurationError("mvn scenarios need d >= 2")
        if self.family == "grf" and (self.p < 2 or self.q < 2):
            raise ConfigurationError("grf scenarios need p, q >= 2")
        if self.sigma2 <= 0 or self.tau <= 0 or self.anisotropy_factor <= 0:
            raise ConfigurationError("sigma2, tau and anisotropy_factor must be positive")
        if self.anisotropy_on not in ("forecast", "truth"):
            raise ConfigurationError("anisotropy_on must be 'forecast' or 'truth'")
        if self.m < 1 or self.n_cases < 0:
            raise ConfigurationError("need m >= 1 and n_cases >= 0")

    @property
    def dim(self) -> int:
        return self.d if self.family == "mvn" else self.p * self.q

    @property
    def grid(self):
        return None if self.family == "mvn" else (self.p, self.q)

    def truth_params(self) -> dict:
        factor = self.anisotropy_factor if self.anisotropy_on == "truth" else 1.0
        return {"mu": 0.0, "sigma2": 1.0, "tau": 1.0, "anisotropy": factor}

    def forecast_params(self) -> dict:
        factor = self.anisotropy_factor if self.anisotropy_on == "forecast" else 1.0
        return {"mu": self.mu_shift, "sigma2": self.sigma2, "tau": self.tau, "anisotropy": factor}

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**data)


_MISSPEC = {
    "calibrated": {},
    "mean-under": {"mu_shift": -0.5},
    "mean-over": {"mu_shift": 0.5},
    "var-under": {"sigma2": 0.85},
    "var-over": {"sigma2": 1.25},
    "corr-under": {"tau": 0.5},
    "corr-over": {"tau": 2.0},
}

#: scenario presets by name; ``grf-aniso`` puts the 1.25 vertical rescale on the
#: forecasts, ``grf-aniso-truth`` on the observations
PRESETS = {name: dict(family="mvn", **kw) for name, kw in _MISSPEC.items()}
PRESETS.update({f"grf-{name}": dict(family="grf", **kw) for name, kw in _MISSPEC.items()})
PRESETS["grf-aniso"] = dict(family="grf", anisotropy_factor=1.25, anisotropy_on="forecast")
PRESETS["grf-aniso-truth"] = dict(family="grf", anisotropy_factor=1.25, anisotropy_on="truth")

MISSPECIFIED = ("mean-under", "mean-over", "var-under", "var-over", "corr-under", "corr-over")


def preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kwargs = dict(PRESETS[name])
    kwargs["name"] = name
    kwargs.update(overrides)
    return ScenarioConfig(**kwargs)


def _coordinates(config: ScenarioConfig, anisotropy: float):
    if config.family == "mvn":
        return np.arange(1, config.d + 1, dtype=np.float64)[:, None]
    i, j = np.meshgrid(np.arange(config.p), np.arange(config.q), indexing="ij")
    return np.column_stack([i.ravel(), anisotropy * j.ravel()]).astype(np.float64)


def covariance_matrix(config: ScenarioConfig, sigma2: float, tau: float, anisotropy: float = 1.0):
    """``sigma2 * exp(-dist / tau)`` on the scenario's index set.

    For grids, points are row-major ``(i, j)`` and the second coordinate is
    multiplied by ``anisotropy`` before Euclidean distances are taken.
    """
    xy = _coordinates(config, anisotropy)
    diff = xy[:, None, :] - xy[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    return sigma2 * np.exp(-dist / tau)


def cholesky_factor(cov, retries: int = 3):
    """Lower Cholesky factor, adding diagonal jitter of ``1e-10 * max diag`` on failure."""
    cov = np.asarray(cov, dtype=np.float64)
    jitter = 1e-10 * float(np.max(np.diag(cov)))
    attempt = cov
    for k in range(retries + 1):
        try:
            return linalg.cholesky(attempt, lower=True, check_finite=False)
        except linalg.LinAlgError:
            if k == retries:
                raise
            attempt = cov + (k + 1) * jitter * np.eye(cov.shape[0])
    raise AssertionError("unreachable")


def build_covariance(config: ScenarioConfig, side: str = "forecast"):
    """Cholesky factor of the truth (``side="truth"``) or forecast covariance."""
    params = config.truth_params() if side == "truth" else config.forecast_params()
    cov = covariance_matrix(config, params["sigma2"], params["tau"], params["anisotropy"])
    return cholesky_factor(cov)


class ScenarioSampler:
    """Generates cases for a scenario block by block."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.truth_factor = build_covariance(config, "truth")
        same_cov = {k: v for k, v in config.truth_params().items() if k != "mu"} == {
            k: v for k, v in config.forecast_params().items() if k != "mu"}
        if same_cov:
            self.forecast_factor = self.truth_factor
        else:
            self.forecast_factor = build_covariance(config, "forecast")

    @property
    def n_blocks(self) -> int:
        return -(-self.config.n_cases // BLOCK_SIZE)

    def block_rng(self, block: int):
        return np.random.default_rng([self.config.seed, _CASE_STREAM, block])

    def block(self, index: int):
        """Pool array ``(n_b, M + 1, dim)`` for block ``index``, observation first."""
        cfg = self.config
        start = index * BLOCK_SIZE
        n_b = min(BLOCK_SIZE, cfg.n_cases - start)
        if n_b <= 0:
            raise IndexError(index)
        return sample_block(cfg, self.truth_factor, self.forecast_factor, n_b, self.block_rng(index))

    def blocks(self):
        for b in range(self.n_blocks):
            yield self.block(b)

    def cases(self):
        grid = self.config.grid
        for pool in self.blocks():
            for c in range(pool.shape[0]):
                yield EnsembleCase(pool[c, 0], pool[c, 1:], grid)


def sample_block(config: ScenarioConfig, truth_factor, forecast_factor, n: int, rng):
    dim = truth_factor.shape[0]
    m = config.m
    z = rng.standard_normal((dim, n * (m + 1)))
    obs = truth_factor @ z[:, :n]
    mem = forecast_factor @ z[:, n:]
    pool = np.empty((n, m + 1, dim))
    pool[:, 0, :] = obs.T
    pool[:, 1:, :] = mem.T.reshape(n, m, dim)
    pool[:, 1:, :] += config.mu_shift
    return pool


def sample_case(config: ScenarioConfig, truth_factor, forecast_factor, rng) -> EnsembleCase:
    """One case: observation ``L_t z`` and ``M`` members ``mu + L_f z'``."""
    if truth_factor.shape != forecast_factor.shape:
        raise ConfigurationError("truth and forecast factors differ in dimension")
    pool = sample_block(config, truth_factor, forecast_factor, 1, rng)
    return EnsembleCase(pool[0, 0], pool[0, 1:], config.grid)


def run_scenario(config: ScenarioConfig, specs, lag_k: int = 1, alpha: float = 0.05,
                 burn_in: int = 100, alternative: str = "beta_binomial", track_evalues: bool = True):
    """Simulate ``config.n_cases`` cases and evaluate them with every spec.

    Returns a :class:`mvrank.pipeline.EvaluationRun`.
    """
    from .pipeline import EvaluationRun, evaluate_blocks

    sampler = ScenarioSampler(config)
    run = EvaluationRun(
        specs=list(specs), m=config.m, lag_k=lag_k, alpha=alpha, burn_in=burn_in,
        seed=config.seed, grid=config.grid, alternative=alternative,
        track_evalues=track_evalues,
    )
    return evaluate_blocks(sampler.blocks(), run)


# ---------------------------------------------------------------------------
# shape detectors for rank histograms under the preset mis-specifications


def histogram_trend(counts) -> float:
    """Spearman correlation between bin index and count."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.all(counts == counts[0]):
        return 0.0
    return float(stats.spearmanr(np.arange(counts.size), counts)[0])


def centre_average(counts) -> float:
    """Mean count over the middle third of the bins."""
    counts = np.asarray(counts, dtype=np.float64)
    k = counts.size
    lo, hi = k // 3, k - k // 3
    return float(counts[lo:hi].mean())


def is_cup(counts, factor: float = 1.5) -> bool:
    """Both end bins exceed ``factor`` times the centre average."""
    c = centre_average(counts)
    return bool(counts[0] > factor * c and counts[-1] > factor * c)


def is_cap(counts, factor: float = 1.5) -> bool:
    """Both end bins fall below the centre average divided by ``factor``."""
    c = centre_average(counts)
    return bool(counts[0] * factor < c and counts[-1] * factor < c)


def rank_skewness(counts) -> float:
    """Skewness of the rank distribution described by ``counts``."""
    counts = np.asarray(counts, dtype=np.float64)
    r = np.arange(1, counts.size + 1)
    w = counts / counts.sum()
    mu = (w * r).sum()
    var = (w * (r - mu) ** 2).sum()
    return float((w * (r - mu) ** 3).sum() / var ** 1.5) if var > 0 else 0.0


def is_flat(hist, level: float = 0.001) -> bool:
    return flatness_pvalue(hist) >= level


def misspecification_detectors(runs: dict, prefix: str = "") -> dict:
    """Shape checks on runs keyed by preset name (``mean-under`` ... ``corr-over``).

    ``prefix`` is prepended to the preset names, e.g. ``"grf-"``. Each entry
    of the result maps a check name to ``(passed, detail)``.
    """
    def hist(scen, spec):
        return runs[prefix + scen].histograms[spec]

    out = {}
    lo, hi = histogram_trend(hist("mean-under", "location").bin_counts), \
        histogram_trend(hist("mean-over", "location").bin_counts)
    out["location_mean_trends"] = (lo >= 0.9 and hi <= -0.9, f"rho {lo:+.2f} / {hi:+.2f}")

    under, over = hist("var-under", "scale").bin_counts, hist("var-over", "scale").bin_counts
    out["scale_cup_cap"] = (
        is_cup(under) and is_cap(over),
        f"ends/centre {under[0] / centre_average(under):.2f},{under[-1] / centre_average(under):.2f}"
        f" / {over[0] / centre_average(over):.2f},{over[-1] / centre_average(over):.2f}",
    )

    a = histogram_trend(hist("corr-under", "dependence:h=1").bin_counts)
    b = histogram_trend(hist("corr-over", "dependence:h=1").bin_counts)
    nonflat = not is_flat(hist("corr-under", "dependence:h=1")) and not is_flat(hist("corr-over", "dependence:h=1"))
    out["dependence_opposite_trends"] = (a * b < 0 and nonflat, f"rho {a:+.2f} / {b:+.2f}")

    if "multivariate" in runs[prefix + "var-under"].histograms:
        flat = {f"{k}@{s}": is_flat(hist(s, k)) for k in ("multivariate", "average")
                for s in ("var-under", "var-over")}
        out["scale_insensitive_multivariate_average"] = (all(flat.values()), str(flat))

    if "energy_score" in runs[prefix + "var-under"].histograms:
        scen = ("mean-under", "mean-over", "var-under", "var-over", "corr-under", "corr-over")
        trends = [histogram_trend(hist(s, "energy_score").bin_counts) for s in scen]
        skews = [rank_skewness(hist(s, "energy_score").bin_counts) for s in scen]
        same = all(t > 0 for t in trends) or all(t < 0 for t in trends)
        out["energy_same_shape"] = (
            same and all(s < 0 for s in skews),
            "trend " + ",".join(f"{t:+.2f}" for t in trends) + " skew " + ",".join(f"{s:+.2f}" for s in skews),
        )
    return out


def isotropy_detectors(forecast_run, truth_run, others=("location", "scale", "dependence:h=1",
                                                        "average", "band_depth", "fte:t=1")) -> dict:
    """Checks for the anisotropic-forecast and anisotropic-truth grid scenarios."""
    out = {}
    h_f, h_t = forecast_run.histograms["isotropy:h=1"], truth_run.histograms["isotropy:h=1"]
    a, b = histogram_trend(h_f.bin_counts), histogram_trend(h_t.bin_counts)
    out["isotropy_detects_and_reverses"] = (
        not is_flat(h_f) and not is_flat(h_t) and a * b < 0 and min(abs(a), abs(b)) >= 0.9,
        f"rho {a:+.2f} / {b:+.2f}",
    )
    for name in others:
        pf = flatness_pvalue(forecast_run.histograms[name])
        pt = flatness_pvalue(truth_run.histograms[name])
        out[f"{name}_flat"] = (pf >= 0.001 and pt >= 0.001, f"p {pf:.2e} / {pt:.2e}")
    return out
