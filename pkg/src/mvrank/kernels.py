"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``MVRANK_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementations are used. ``BACKEND`` names the choice.
"""
import os

from . import _kernels_py

_force_pure = os.environ.get("MVRANK_PURE_PYTHON", "") not in ("", "0")

if _force_pure:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

dim_rank_stats = _impl.dim_rank_stats
dominance_counts = _impl.dominance_counts
pairwise_distances = _impl.pairwise_distances
lag_variogram = _impl.lag_variogram
grid_variogram = _impl.grid_variogram

python = _kernels_py

__all__ = [
    "BACKEND",
    "dim_rank_stats",
    "dominance_counts",
    "pairwise_distances",
    "lag_variogram",
    "grid_variogram",
    "python",
]
