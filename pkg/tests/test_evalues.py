import math

import numpy as np
import pytest
from scipy import stats

from mvrank.errors import InvalidInputError, InvalidStateError, SequencingError
from mvrank.evalues import (
    AlternativeModel,
    EProcess,
    _BetaBinomialObjective,
    beta_binomial_pmf,
    decide,
    decisions_json,
    e_factor,
    fit_beta_binomial,
    reciprocal_p,
    rejection_threshold,
)


class ScriptedProcess(EProcess):
    """E-process whose factors come from a fixed list."""

    def __init__(self, factors, lag_k=1):
        super().__init__(m=1, lag_k=lag_k, burn_in=0)
        self._script = list(factors)

    def factor(self, rank, t):
        return self._script[t - 1]


def test_pmf_matches_scipy():
    for m, a, b in [(20, 2.0, 5.0), (10, 0.3, 0.7), (5, 40.0, 1.2)]:
        np.testing.assert_allclose(beta_binomial_pmf(m, a, b), stats.betabinom.pmf(np.arange(m + 1), m, a, b),
                                   rtol=1e-12)


def test_pmf_a_b_one_is_uniform():
    np.testing.assert_allclose(beta_binomial_pmf(20, 1.0, 1.0), np.full(21, 1 / 21), rtol=1e-14)


def test_gradient_matches_finite_differences(rng):
    counts = rng.integers(0, 50, size=12)
    obj = _BetaBinomialObjective(counts)
    theta = np.array([0.3, -0.4])
    g, h = obj.grad_hess(theta)
    eps = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        num = (obj.loglik(theta + e) - obj.loglik(theta - e)) / (2 * eps)
        assert num == pytest.approx(g[k], rel=1e-6)
        gp, _ = obj.grad_hess(theta + e)
        gm, _ = obj.grad_hess(theta - e)
        np.testing.assert_allclose((gp - gm) / (2 * eps), h[:, k], rtol=1e-5)


def test_loglik_matches_scipy(rng):
    ranks = rng.integers(1, 22, size=300)
    counts = np.bincount(ranks - 1, minlength=21)
    obj = _BetaBinomialObjective(counts)
    a, b = 1.7, 0.6
    ll = stats.betabinom.logpmf(ranks - 1, 20, a, b).sum()
    const = (np.log([math.comb(20, k) for k in ranks - 1])).sum()
    assert obj.loglik(np.log([a, b])) + const == pytest.approx(ll, rel=1e-10)


def test_fit_uniform_ranks():
    ranks = np.tile(np.arange(1, 22), 500)
    model = fit_beta_binomial(ranks, 20)
    assert np.abs(model.pmf - 1 / 21).max() <= 0.01


def test_fit_matches_grid_search(rng):
    ranks = stats.betabinom.rvs(20, 2, 5, size=10000, random_state=rng) + 1
    model = fit_beta_binomial(ranks, 20)
    grid = np.linspace(0.1, 20, 200)
    A, B = np.meshgrid(grid, grid, indexing="ij")
    counts = np.bincount(ranks - 1, minlength=21)
    k = np.arange(21)
    ll = np.array([[counts @ stats.betabinom.logpmf(k, 20, a, b) for b in grid] for a in grid])
    ia, ib = np.unravel_index(np.argmax(ll), ll.shape)
    assert model.alpha == pytest.approx(A[ia, ib], rel=0.1)
    assert model.beta == pytest.approx(B[ia, ib], rel=0.1)
    assert not model.fallback


def test_fit_degenerate_falls_back():
    model = fit_beta_binomial([3, 3, 3, 3], 5)
    assert model.fallback and model.kind == "uniform"
    np.testing.assert_allclose(model.pmf, 1 / 6)


def test_fit_extreme_counts_stay_finite():
    model = fit_beta_binomial([1] * 500 + [21] * 500, 20)
    assert np.all(np.isfinite(model.pmf)) and model.pmf[0] > 0.3


def test_e_factor_examples():
    uni = AlternativeModel.uniform(20)
    assert all(e_factor(r, uni, 20) == pytest.approx(1.0) for r in range(1, 22))
    half = AlternativeModel("empirical", 1, counts=np.zeros(2), pmf=np.array([0.5, 0.5]))
    assert e_factor(1, half, 1) == 1.0 and e_factor(2, half, 1) == 1.0
    tenth = AlternativeModel("empirical", 20, counts=np.zeros(21), pmf=np.full(21, 0.1))
    assert e_factor(5, tenth, 20) == pytest.approx(2.1)
    with pytest.raises(InvalidInputError):
        e_factor(22, uni, 20)


def test_running_product_and_lag_average():
    proc = ScriptedProcess([2.0, 0.5, 3.0]).update_many([1, 1, 1])
    np.testing.assert_allclose(proc.trace, [2.0, 1.0, 3.0])
    proc = ScriptedProcess([4.0, 1.0], lag_k=2).update_many([1, 1])
    assert proc.value == pytest.approx(2.5)


def test_thresholds():
    assert rejection_threshold(0.05) == 20
    assert rejection_threshold(0.05, ell=3, lag_k=5) == pytest.approx(262.4, abs=0.1)
    assert rejection_threshold(0.05, ell=7) == pytest.approx(140)


def test_decide_sticky_and_absent():
    proc = ScriptedProcess([30.0, 0.01, 1.0]).update_many([1, 1, 1])
    dec = decide(proc, 0.05)
    assert dec.rejected and dec.rejected_at == 1
    quiet = ScriptedProcess([1.5, 1.0]).update_many([1, 1])
    dec = decide(quiet, 0.05)
    assert not dec.rejected and dec.rejected_at is None
    assert dec.to_dict()["threshold"] == 20


def test_reciprocal_p():
    assert reciprocal_p(ScriptedProcess([20.0]).update_many([1])) == pytest.approx(0.05)
    assert reciprocal_p(ScriptedProcess([0.5]).update_many([1])) == 1.0
    with pytest.raises(InvalidStateError):
        reciprocal_p(EProcess(5))


def test_sequencing_and_range_errors():
    proc = EProcess(5)
    proc.update(2, t=3)
    with pytest.raises(SequencingError):
        proc.update(2, t=3)
    with pytest.raises(InvalidInputError):
        proc.update(7)


def test_burn_in_and_skips_contribute_one(rng):
    proc = EProcess(10, burn_in=50)
    proc.update_many(np.tile([1, 2], 25))
    assert np.all(proc.factors == 1.0)
    proc.update(1)
    assert proc.factors[-1] > 1
    proc.update(5, skipped=True)
    assert proc.factors[-1] == 1.0
    assert proc.classes[0].counts.sum() == 51


def test_factor_is_predictable(rng):
    proc = EProcess(20, burn_in=10)
    ranks = rng.integers(1, 22, size=200)
    for t, r in enumerate(ranks, start=1):
        before = proc.factor(int(r), t)
        proc.update(int(r))
        assert proc.factors[-1] == before


def test_uniform_alternative_is_identically_one(rng):
    proc = EProcess(20, burn_in=0, alternative="uniform")
    proc.update_many(rng.integers(1, 22, size=300))
    assert np.all(proc.trace == 1.0)


def test_empirical_alternative_positive(rng):
    proc = EProcess(5, burn_in=0, alternative="empirical")
    proc.update_many(np.ones(100, dtype=int))
    assert np.all(proc.factors > 0) and proc.value > 1


def test_lag_one_is_plain_product(rng):
    proc = EProcess(20, burn_in=5).update_many(rng.integers(1, 22, size=400))
    acc, plain = 0.0, []
    for f in proc.factors.tolist():
        acc += math.log(f)
        plain.append(math.exp(acc))
    np.testing.assert_array_equal(proc.trace, plain)


def test_lag_classes_have_own_models(rng):
    proc = EProcess(10, lag_k=3, burn_in=0)
    proc.update_many(rng.integers(1, 12, size=30))
    assert [c.counts.sum() for c in proc.classes] == [10, 10, 10]
    np.testing.assert_allclose(proc.value, np.exp(proc.log_products).mean())


def test_null_factor_mean_is_one(rng):
    factors = []
    for _ in range(40):
        proc = EProcess(20, burn_in=100)
        proc.update_many(rng.integers(1, 22, size=2600))
        factors.append(proc.factors[100:])
    f = np.concatenate(factors)
    assert f.size == 100000
    assert abs(f.mean() - 1) < 0.02


def test_trace_csv_and_decisions_json(rng):
    proc = ScriptedProcess([2.0, 15.0], lag_k=1).update_many([1, 1])
    proc.name = "location"
    text = proc.trace_csv(threshold=20)
    lines = [row.split(",") for row in text.splitlines()]
    assert lines[0] == ["t", "e_t", "rejected"]
    assert [int(r[0]) for r in lines[1:]] == [1, 2] and [r[2] for r in lines[1:]] == ["0", "1"]
    assert float(lines[2][1]) == pytest.approx(30.0)
    data = decisions_json([proc], 0.05)
    assert '"rejected_at": 2' in data
