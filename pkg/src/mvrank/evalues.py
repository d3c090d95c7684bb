"""Sequential calibration tests for rank histograms based on e-values.

At time ``t`` the observation rank ``R_t`` contributes the factor
``E_t = (M + 1) p_A(R_t)``, where ``p_A`` is an alternative rank distribution
estimated from strictly earlier ranks. For forecasts at lead time ``k``, the
factors are split into ``k`` interleaved classes and the e-process is the
average of the per-class running products. A null hypothesis of a flat
histogram is rejected once the e-process reaches ``ell / alpha`` (``k = 1``)
or ``ell * e * log(k) / alpha`` (``k > 1``), ``ell`` being the number of
pre-ranks tested together.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import InvalidInputError, InvalidStateError, SequencingError

#: bounds on log(alpha), log(beta) during fitting
LOG_PARAM_BOUNDS = (-9.0, 14.0)


@dataclass
class AlternativeModel:
    """Alternative distribution ``p_A`` over ranks ``1..M+1``.

    ``kind`` is ``beta_binomial``, ``empirical`` or ``uniform``. ``fallback``
    marks a beta-binomial fit that failed and was replaced by the uniform
    distribution.
    """

    kind: str
    m: int
    alpha: float | None = None
    beta: float | None = None
    counts: np.ndarray | None = None
    fitted_on: int = 0
    fallback: bool = False
    converged: bool = True
    iterations: int = 0
    pmf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.pmf is None:
            if self.kind == "beta_binomial":
                self.pmf = beta_binomial_pmf(self.m, self.alpha, self.beta)
            elif self.kind == "empirical":
                c = np.asarray(self.counts, dtype=np.float64)
                self.pmf = (c + 1.0) / (c.sum() + self.m + 1.0)
            elif self.kind == "uniform":
                self.pmf = np.full(self.m + 1, 1.0 / (self.m + 1))
            else:
                raise InvalidInputError(f"unknown alternative {self.kind!r}")

    def prob(self, rank: int) -> float:
        if not 1 <= rank <= self.m + 1:
            raise InvalidInputError(f"rank {rank} outside 1..{self.m + 1}")
        return float(self.pmf[rank - 1])

    @classmethod
    def uniform(cls, m: int, fitted_on: int = 0, fallback: bool = False):
        return cls("uniform", m, fitted_on=fitted_on, fallback=fallback, converged=not fallback)


@functools.lru_cache(maxsize=64)
def _pmf_tables(m):
    k = np.arange(m + 1)
    log_choose = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
    return np.arange(m, dtype=np.float64), log_choose


def beta_binomial_pmf(m: int, a: float, b: float):
    """Beta-binomial probabilities of ``0..m`` (returned for ranks ``1..m+1``)."""
    i, log_choose = _pmf_tables(m)
    la = np.zeros(m + 1)
    lb = np.zeros(m + 1)
    np.cumsum(np.log(a + i), out=la[1:])  # log rising factorial (a)_k
    np.cumsum(np.log(b + i), out=lb[1:])
    logp = log_choose + la + lb[::-1] - np.log(a + b + i).sum()
    p = np.exp(logp - logp.max())
    return p / p.sum()


class _BetaBinomialObjective:
    """Beta-binomial log-likelihood of rank counts in ``theta = (log a, log b)``.

    Uses the rising-factorial form, so only logs and reciprocals of ``a + i``,
    ``b + i`` and ``a + b + i`` (``i < M``) are needed; these are the finite
    sums behind the digamma and trigamma differences of the usual expressions.
    """

    def __init__(self, counts):
        c = np.asarray(counts, dtype=np.float64)
        self.m = c.size - 1
        self.n = c.sum()
        cum = np.cumsum(c)
        self.i = _pmf_tables(self.m)[0]
        self.s = self.n - cum[:-1]  # number of ranks k > i
        self.t = cum[::-1][1:]  # number of ranks with m - k > i

    def loglik(self, theta):
        a, b = np.exp(theta)
        i = self.i
        return (self.s @ np.log(a + i) + self.t @ np.log(b + i)
                - self.n * np.log(a + b + i).sum())

    def grad_hess(self, theta):
        a, b = np.exp(theta)
        i = self.i
        ra = 1.0 / (a + i)
        rb = 1.0 / (b + i)
        rab = 1.0 / (a + b + i)
        ga = self.s @ ra - self.n * rab.sum()
        gb = self.t @ rb - self.n * rab.sum()
        cab = self.n * (rab @ rab)
        haa = -(self.s @ (ra * ra)) + cab
        hbb = -(self.t @ (rb * rb)) + cab
        grad = np.array([a * ga, b * gb])
        hess = np.array([
            [a * a * haa + a * ga, a * b * cab],
            [a * b * cab, b * b * hbb + b * gb],
        ])
        return grad, hess


def _projected_grad(theta, grad):
    lo, hi = LOG_PARAM_BOUNDS
    g = grad.copy()
    g[(theta <= lo) & (g < 0)] = 0.0
    g[(theta >= hi) & (g > 0)] = 0.0
    return g


def _newton_step(obj, theta):
    """One damped, box-projected Newton ascent step."""
    grad, hess = obj.grad_hess(theta)
    lo, hi = LOG_PARAM_BOUNDS
    (h11, h12), (_, h22) = hess
    det = h11 * h22 - h12 * h12
    free = ~(((theta <= lo) & (grad < 0)) | ((theta >= hi) & (grad > 0)))
    if not free.any():
        return theta
    if not free.all():
        # reduced step along the coordinate not pinned at its bound
        k = int(np.flatnonzero(free)[0])
        direction = np.zeros(2)
        hk = hess[k, k]
        direction[k] = -grad[k] / hk if hk < 0 else grad[k] / max(1.0, abs(hk))
    elif h11 < 0 and det > 0:
        # -H^{-1} g for the 2x2 negative definite Hessian
        direction = np.array([-(h22 * grad[0] - h12 * grad[1]) / det,
                              -(h11 * grad[1] - h12 * grad[0]) / det])
    else:
        direction = grad / max(1.0, np.abs(hess).max())
    f0 = obj.loglik(theta)
    slack = 1e-12 * (1.0 + abs(f0))
    step = 1.0
    for _ in range(30):
        cand = theta + step * direction
        cand = np.minimum(np.maximum(cand, lo), hi)
        if obj.loglik(cand) >= f0 - slack:
            return cand
        step *= 0.5
    return theta


def fit_beta_binomial_counts(counts, init=None, tol=1e-8, max_iter=200):
    """Maximum likelihood beta-binomial fit to rank counts.

    ``counts[r - 1]`` is the number of occurrences of rank ``r``. Returns an
    :class:`AlternativeModel`; fits with fewer than two distinct ranks or
    without convergence fall back to the uniform model.
    """
    counts = np.asarray(counts, dtype=np.float64)
    m = counts.size - 1
    n = int(counts.sum())
    if np.count_nonzero(counts) < 2:
        return AlternativeModel.uniform(m, fitted_on=n, fallback=True)
    obj = _BetaBinomialObjective(counts)
    theta = np.zeros(2) if init is None else np.clip(np.asarray(init, float), *LOG_PARAM_BOUNDS)
    for it in range(1, max_iter + 1):
        new = _newton_step(obj, theta)
        grad, _ = obj.grad_hess(new)
        moved = np.abs(new - theta).max()
        theta = new
        if np.linalg.norm(_projected_grad(theta, grad)) / n <= tol:
            a, b = np.exp(theta)
            return AlternativeModel("beta_binomial", m, alpha=float(a), beta=float(b),
                                    fitted_on=n, iterations=it)
        if moved == 0.0:
            break
    return AlternativeModel.uniform(m, fitted_on=n, fallback=True)


def fit_beta_binomial(ranks, m: int, init=None, tol=1e-8, max_iter=200):
    """Fit a beta-binomial on ``{0..M}`` to ``ranks`` in ``1..M+1`` (shifted by one)."""
    ranks = np.asarray(ranks, dtype=np.int64).ravel()
    if ranks.size and (ranks.min() < 1 or ranks.max() > m + 1):
        raise InvalidInputError(f"ranks must lie in 1..{m + 1}")
    counts = np.bincount(ranks - 1, minlength=m + 1)
    return fit_beta_binomial_counts(counts, init=init, tol=tol, max_iter=max_iter)


def e_factor(rank: int, model: AlternativeModel, m: int) -> float:
    """``(M + 1) p_A(rank)``."""
    if not 1 <= rank <= m + 1:
        raise InvalidInputError(f"rank {rank} outside 1..{m + 1}")
    return (m + 1) * model.prob(rank)


def rejection_threshold(alpha: float, ell: int = 1, lag_k: int = 1) -> float:
    """Bonferroni threshold ``ell / alpha``, times ``e log(k)`` for ``k > 1``."""
    if not 0 < alpha < 1:
        raise InvalidInputError("alpha must lie in (0, 1)")
    if ell < 1 or lag_k < 1:
        raise InvalidInputError("ell and lag_k must be positive")
    if lag_k == 1:
        return ell / alpha
    return ell * math.e * math.log(lag_k) / alpha


class _ClassState:
    """Rank counts and fitted alternative for one index class."""

    def __init__(self, m, alternative, refit_every):
        self.m = m
        self.alternative = alternative
        self.refit_every = refit_every
        self.counts = np.zeros(m + 1, dtype=np.int64)
        self._model = None
        self._theta = None
        self._since_full = 0
        self._stale = True

    def add(self, rank):
        self.counts[rank - 1] += 1
        self._since_full += 1
        self._stale = True

    def model(self) -> AlternativeModel:
        if not self._stale and self._model is not None:
            return self._model
        n = int(self.counts.sum())
        if self.alternative == "uniform":
            self._model = AlternativeModel.uniform(self.m, fitted_on=n)
        elif self.alternative == "empirical":
            self._model = AlternativeModel("empirical", self.m, counts=self.counts.copy(), fitted_on=n)
        elif self._theta is None or self._since_full >= self.refit_every:
            self._model = fit_beta_binomial_counts(self.counts, init=self._theta)
            if not self._model.fallback:
                self._theta = np.log([self._model.alpha, self._model.beta])
            self._since_full = 0
        else:
            if np.count_nonzero(self.counts) >= 2:
                self._theta = _newton_step(_BetaBinomialObjective(self.counts), self._theta)
                a, b = np.exp(self._theta)
                self._model = AlternativeModel("beta_binomial", self.m, alpha=float(a),
                                               beta=float(b), fitted_on=n, converged=False)
        self._stale = False
        return self._model


class EProcess:
    """Sequential e-process for one pre-rank.

    Parameters
    ----------
    m : int
        Ensemble size; ranks lie in ``1..m+1``.
    lag_k : int
        Forecast lead time; factors at times ``t`` with equal ``(t - 1) mod k``
        form one class with its own running product and alternative model.
    burn_in : int
        Factors at times ``t <= burn_in`` are fixed to 1 (their ranks still
        feed the alternative).
    alternative : {"beta_binomial", "empirical", "uniform"}
    refit_every : int
        Full beta-binomial refit cadence; in between, one warm-started Newton
        step is taken per new rank.
    """

    def __init__(self, m, lag_k=1, burn_in=100, alternative="beta_binomial",
                 refit_every=25, name=""):
        if m < 1 or lag_k < 1 or burn_in < 0:
            raise InvalidInputError("need m >= 1, lag_k >= 1, burn_in >= 0")
        self.m = int(m)
        self.lag_k = int(lag_k)
        self.burn_in = int(burn_in)
        self.alternative = alternative
        self.name = name
        self.classes = [_ClassState(self.m, alternative, refit_every) for _ in range(self.lag_k)]
        self.log_products = np.zeros(self.lag_k)
        self.t = 0
        self._times = []
        self._evalues = []
        self._factors = []

    def class_of(self, t: int) -> int:
        return (t - 1) % self.lag_k

    def factor(self, rank: int, t: int) -> float:
        """Factor ``E_t`` for ``rank`` at time ``t``, from earlier ranks only."""
        if t <= self.burn_in:
            return 1.0
        model = self.classes[self.class_of(t)].model()
        return e_factor(rank, model, self.m)

    def update(self, rank, t=None, skipped=False) -> "EProcess":
        if t is None:
            t = self.t + 1
        t = int(t)
        if t <= self.t:
            raise SequencingError(f"time {t} does not follow {self.t}")
        j = self.class_of(t)
        if skipped:
            fac = 1.0
        else:
            rank = int(rank)
            if not 1 <= rank <= self.m + 1:
                raise InvalidInputError(f"rank {rank} outside 1..{self.m + 1}")
            fac = self.factor(rank, t)
            self.classes[j].add(rank)
        self.log_products[j] += math.log(fac) if fac > 0 else -math.inf
        self.t = t
        self._times.append(t)
        self._factors.append(fac)
        self._evalues.append(self._current())
        return self

    def update_many(self, ranks, skipped=None) -> "EProcess":
        ranks = np.asarray(ranks).ravel()
        if skipped is None:
            skipped = np.zeros(ranks.shape, dtype=bool)
        for r, s in zip(ranks.tolist(), np.asarray(skipped).ravel().tolist()):
            self.update(r, skipped=s)
        return self

    def _current(self) -> float:
        lp = self.log_products
        if self.lag_k == 1:
            return math.exp(lp[0])
        mx = lp.max()
        if mx == -math.inf:
            return 0.0
        return float(math.exp(mx) * np.exp(lp - mx).mean())

    @property
    def value(self) -> float:
        return self._evalues[-1] if self._evalues else 1.0

    @property
    def per_class_products(self):
        return np.exp(self.log_products)

    @property
    def times(self):
        return np.asarray(self._times, dtype=np.int64)

    @property
    def trace(self):
        return np.asarray(self._evalues, dtype=np.float64)

    @property
    def factors(self):
        return np.asarray(self._factors, dtype=np.float64)

    def trace_csv(self, threshold=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "e_t", "rejected"])
        rejected = False
        for t, e in zip(self._times, self._evalues):
            if threshold is not None and e >= threshold:
                rejected = True
            writer.writerow([t, repr(float(e)), int(rejected)])
        return buf.getvalue()


@dataclass
class TestDecision:
    level_alpha: float
    n_preranks_ell: int
    lag_k: int
    threshold: float
    rejected: bool
    rejected_at: int | None = None

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "alpha": self.level_alpha,
            "ell": self.n_preranks_ell,
            "lag_k": self.lag_k,
            "threshold": self.threshold,
            "rejected": self.rejected,
            "rejected_at": self.rejected_at,
        }


def decide(proc: EProcess, alpha: float, ell: int = 1) -> TestDecision:
    """Reject at the first time the e-process reaches the Bonferroni threshold."""
    threshold = rejection_threshold(alpha, ell, proc.lag_k)
    trace = proc.trace
    hits = np.flatnonzero(trace >= threshold)
    if hits.size:
        return TestDecision(alpha, ell, proc.lag_k, threshold, True, int(proc.times[hits[0]]))
    return TestDecision(alpha, ell, proc.lag_k, threshold, False, None)


def reciprocal_p(proc: EProcess) -> float:
    """Conservative p-value ``min(1, 1 / max_t e_t)``."""
    if not len(proc.trace):
        raise InvalidStateError("e-process has no recorded values")
    mx = float(proc.trace.max())
    return 1.0 if mx <= 1.0 else 1.0 / mx


def decisions_json(procs, alpha: float) -> str:
    ell = len(procs)
    out = {}
    for proc in procs:
        dec = decide(proc, alpha, ell)
        item = dec.to_dict()
        item["final_e"] = proc.value
        item["max_e"] = float(proc.trace.max()) if len(proc.trace) else None
        out[proc.name] = item
    return json.dumps(out, indent=2, sort_keys=True)
