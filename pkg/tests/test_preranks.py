import math

import numpy as np
import pytest

from mvrank.errors import ConfigurationError, InvalidInputError
from mvrank.preranks import (
    EnsembleCase,
    PreRankSpec,
    apply_prerank,
    average_rank,
    band_depth,
    default_specs,
    dependence_prerank,
    energy_score_prerank,
    location_prerank,
    multivariate_rank,
    prerank_values,
    scale_prerank,
)
from mvrank.ranks import RankHistogram, chi2_critical, chi_square_flatness, randomized_ranks

from . import oracles


def case(obs, members, grid=None):
    return EnsembleCase(np.asarray(obs, float), np.asarray(members, float), grid)


def test_multivariate_examples():
    assert multivariate_rank(case([1, 1], [[0, 0], [2, 2]])).obs_value == 2
    assert multivariate_rank(case([3], [[1], [2]])).obs_value == 3


def test_multivariate_matches_double_loop(rng):
    for _ in range(100):
        pool = rng.standard_normal((21, 10))
        pool[rng.random((21, 10)) < 0.02] = 0.0
        got = multivariate_rank(case(pool[0], pool[1:]))
        assert [got.obs_value, *got.member_values] == oracles.dominance_oracle(pool.tolist())


def test_average_and_band_depth_examples(rng):
    assert average_rank(case([2], [[1], [3]]), rng).obs_value == 2
    assert average_rank(case([3, 0], [[1, 1], [2, 2]]), rng).obs_value == 2
    assert band_depth(case([2], [[1], [3]]), rng).obs_value == 1
    assert band_depth(case([-5, -5], [[1, 1], [2, 2]]), rng).obs_value == 0


def test_average_and_band_depth_match_sorting_oracle(rng):
    for _ in range(100):
        m1, d = rng.integers(2, 12), rng.integers(1, 15)
        pool = rng.standard_normal((m1, d))
        c = case(pool[0], pool[1:])
        avg = average_rank(c, rng)
        bd = band_depth(c, rng)
        np.testing.assert_allclose([avg.obs_value, *avg.member_values], oracles.average_rank_oracle(pool.tolist()), rtol=1e-14)
        np.testing.assert_allclose([bd.obs_value, *bd.member_values], oracles.band_depth_oracle(pool.tolist()), rtol=1e-14)


def test_band_depth_bounds_with_ties(rng):
    m = 9
    bound = max((m + 1 - r) * (r - 1) for r in range(1, m + 2))
    for _ in range(50):
        pool = rng.integers(0, 3, size=(m + 1, 6)).astype(float)
        v = band_depth(case(pool[0], pool[1:]), rng)
        vals = np.r_[v.obs_value, v.member_values]
        assert vals.min() >= 0 and vals.max() <= bound


def test_tied_dim_ranks_are_a_permutation(rng):
    pool = np.zeros((1, 6, 3))
    vals, _ = prerank_values(pool, PreRankSpec("average"), rng)
    # all tied: each dimension's ranks are a permutation of 1..6, so the mean of averages is 3.5
    assert vals.mean() == pytest.approx(3.5)


def test_energy_examples():
    assert energy_score_prerank(case([0], [[1], [-1]])).obs_value == pytest.approx(0.5)
    assert energy_score_prerank(case([2.0, 1.0], [[2.0, 1.0]])).obs_value == 0.0


def test_energy_matches_triple_loop(rng):
    for _ in range(50):
        pool = rng.standard_normal((11, 5))
        got = energy_score_prerank(case(pool[0], pool[1:]))
        want = oracles.energy_oracle(pool.tolist())
        for g, w in zip([got.obs_value, *got.member_values], want):
            assert oracles.rel_err(g, w) < 1e-12


def test_energy_translation_invariant(rng):
    pool = rng.standard_normal((8, 4))
    a = energy_score_prerank(case(pool[0], pool[1:]))
    shift = rng.standard_normal(4) * 10
    b = energy_score_prerank(case(pool[0] + shift, pool[1:] + shift))
    np.testing.assert_allclose(b.member_values, a.member_values, atol=1e-10)


def test_location_scale_examples(rng):
    assert location_prerank([1, 2, 3]) == 2
    assert location_prerank([4.5] * 7) == 4.5
    assert scale_prerank([1, 2, 3]) == pytest.approx(2 / 3)
    assert scale_prerank([3.0] * 5) == 0
    v, c = rng.standard_normal(50), 17.3
    assert scale_prerank(v + c) == pytest.approx(scale_prerank(v), abs=1e-10)
    x = rng.standard_normal(900) * 1e3
    assert abs(location_prerank(x) - math.fsum(x) / 900) <= 1e-12 * abs(math.fsum(x) / 900)


def test_dependence_examples(rng):
    assert dependence_prerank([0, 1, 0, 1], 1) == pytest.approx(-2)
    assert dependence_prerank([2.0] * 6, 1) == 0
    for h in (1, 2, 5):
        v = rng.standard_normal(100)
        assert oracles.rel_err(dependence_prerank(v, h), oracles.dependence_oracle(v.tolist(), h)) < 1e-12
        assert dependence_prerank(-3.7 * v, h) == pytest.approx(dependence_prerank(v, h), rel=1e-10)


def test_apply_location_is_direct_mean(rng):
    pool = rng.standard_normal((5, 7))
    out = apply_prerank(case(pool[0], pool[1:]), PreRankSpec("location"))
    np.testing.assert_allclose(out.member_values, pool[1:].mean(axis=1))


def test_pooled_standardization_rank_invariant_under_affine(rng):
    spec = PreRankSpec("location", standardize="pooled")
    for _ in range(30):
        pool = rng.standard_normal((1, 9, 4))
        a = rng.uniform(0.2, 5, size=4)
        b = rng.standard_normal(4)
        v1, _ = prerank_values(pool, spec)
        v2, _ = prerank_values(pool * a + b, spec)
        r1 = (v1[0, 1:] < v1[0, 0]).sum()
        r2 = (v2[0, 1:] < v2[0, 0]).sum()
        assert r1 == r2


def test_climatological_standardization(rng):
    spec = PreRankSpec("location", standardize="climatological", clim_mean=[1.0, 2.0], clim_sd=[2.0, 4.0])
    pool = rng.standard_normal((1, 4, 2))
    vals, _ = prerank_values(pool, spec)
    np.testing.assert_allclose(vals[0], ((pool[0] - [1, 2]) / [2, 4]).mean(axis=1))
    with pytest.raises(ConfigurationError):
        prerank_values(rng.standard_normal((1, 4, 3)), spec)
    with pytest.raises(ConfigurationError):
        PreRankSpec("location", standardize="climatological", clim_mean=[0.0], clim_sd=[0.0])


def test_fte_skip_rule():
    pool = np.full((2, 4, 4), 5.0)
    pool[1] = -5.0
    vals, skipped = prerank_values(pool, PreRankSpec("fte", threshold_t=0.0))
    assert skipped.tolist() == [False, True]
    vals, skipped = prerank_values(pool, PreRankSpec("fte", threshold_t=-10.0))
    assert not skipped.any() and np.all(vals == 1)


def test_spec_name_parse_round_trip():
    for text in ["location", "dependence:h=2", "fte:t=1", "isotropy:h=3",
                 "dependence:h=1,lag=0;2", "average:std=pooled"]:
        spec = PreRankSpec.parse(text)
        assert spec.name == text
        assert PreRankSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigurationError):
        PreRankSpec.parse("wobble")
    with pytest.raises(ConfigurationError):
        PreRankSpec.parse("dependence:q=1")


def test_layout_checks(rng):
    with pytest.raises(ConfigurationError):
        prerank_values(rng.standard_normal((1, 3, 4)), PreRankSpec("isotropy"))
    with pytest.raises(ConfigurationError):
        prerank_values(rng.standard_normal((1, 3, 4)), PreRankSpec("dependence", lag_h=4))
    with pytest.raises(InvalidInputError):
        EnsembleCase(np.zeros(3), np.zeros((2, 4)))
    with pytest.raises(InvalidInputError):
        EnsembleCase(np.zeros(6), np.zeros((2, 6)), grid=(2, 2))


@pytest.mark.parametrize("kind", ["multivariate", "average", "band_depth", "energy_score"])
def test_context_permutation_invariance(rng, kind):
    pool = rng.standard_normal((1, 9, 5))
    perm = np.r_[0, 1 + rng.permutation(8)]
    a, _ = prerank_values(pool, PreRankSpec(kind), np.random.default_rng(1))
    b, _ = prerank_values(pool[:, perm], PreRankSpec(kind), np.random.default_rng(1))
    np.testing.assert_allclose(b[0], a[0, perm], rtol=1e-12)


@pytest.mark.parametrize("spec", default_specs(grid=True), ids=lambda s: s.name)
def test_exchangeable_pool_flat_for_every_spec(rng, spec):
    pool = rng.standard_normal((3000, 11, 16))
    vals, skipped = prerank_values(pool, spec, rng, grid=(4, 4))
    ranks, _ = randomized_ranks(vals, rng)
    hist = RankHistogram(11).add_ranks(ranks, skipped)
    assert chi_square_flatness(hist) < chi2_critical(11)
