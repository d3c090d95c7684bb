import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvrank import _kernels_py as py
from mvrank import kernels

try:
    from mvrank import _kernels as cy
except ImportError:
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def pools(rng, n=40, m1=8, d=6, discrete=False):
    x = rng.standard_normal((n, m1, d))
    if discrete:
        x = np.round(x)
    return np.ascontiguousarray(x)


def test_backend_flag_matches_module():
    assert kernels.BACKEND in ("compiled", "python")
    if kernels.BACKEND == "python":
        assert kernels.dim_rank_stats is py.dim_rank_stats


def test_env_var_forces_fallback():
    env = dict(os.environ, MVRANK_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import mvrank.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
@pytest.mark.parametrize("discrete", [False, True])
def test_dim_rank_stats_equal(rng, discrete):
    pool = pools(rng, discrete=discrete)
    for a, b in zip(cy.dim_rank_stats(pool), py.dim_rank_stats(pool)):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


@needs_ext
@pytest.mark.parametrize("discrete", [False, True])
def test_dominance_equal(rng, discrete):
    pool = pools(rng, discrete=discrete)
    np.testing.assert_array_equal(np.asarray(cy.dominance_counts(pool)), py.dominance_counts(pool))


@needs_ext
def test_distances_close(rng):
    pool = pools(rng, d=25)
    np.testing.assert_allclose(np.asarray(cy.pairwise_distances(pool)), py.pairwise_distances(pool),
                               rtol=1e-13, atol=1e-13)


@needs_ext
@pytest.mark.parametrize("h", [1, 2, 5])
def test_lag_variogram_close(rng, h):
    x = rng.standard_normal((30, 12))
    np.testing.assert_allclose(np.asarray(cy.lag_variogram(x, h)), py.lag_variogram(x, h), rtol=1e-13)


@needs_ext
@pytest.mark.parametrize("lag", [(1, 0), (0, 1), (1, 1), (-1, 1), (2, -3), (-4, 0)])
def test_grid_variogram_close(rng, lag):
    f = np.ascontiguousarray(rng.standard_normal((20, 9, 11)))
    np.testing.assert_allclose(np.asarray(cy.grid_variogram(f, *lag)), py.grid_variogram(f, *lag), rtol=1e-13)


@needs_ext
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(2, 9), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_rank_kernels_agree_on_random_shapes(n, m1, d, seed):
    r = np.random.default_rng(seed)
    pool = np.ascontiguousarray(r.integers(-2, 3, size=(n, m1, d)).astype(float))
    for a, b in zip(cy.dim_rank_stats(pool), py.dim_rank_stats(pool)):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
    np.testing.assert_array_equal(np.asarray(cy.dominance_counts(pool)), py.dominance_counts(pool))
