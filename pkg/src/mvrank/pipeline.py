"""Evaluate a stream of forecast cases with several pre-ranks at once.

For every spec the run keeps a rank histogram, an e-process and a column of
observation ranks. Each spec draws its randomness from its own stream,
derived from ``(seed, spec name, block index)``, so adding or removing a spec
never changes the results of the others.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .evalues import EProcess, decide
from .preranks import EnsembleCase, PreRankSpec, check_spec, prerank_values
from .ranks import RankHistogram, chi_square_flatness, flatness_pvalue, randomized_ranks
from .sim import BLOCK_SIZE


def spec_stream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")


@dataclass
class EvaluationRun:
    """Configuration and accumulated results of one evaluation."""

    specs: list
    m: int
    lag_k: int = 1
    alpha: float = 0.05
    burn_in: int = 100
    seed: int = 0
    grid: tuple | None = None
    alternative: str = "beta_binomial"
    track_evalues: bool = True
    d: int | None = None
    histograms: dict = field(default_factory=dict)
    eprocesses: dict = field(default_factory=dict)
    n_cases: int = 0
    _rank_blocks: list = field(default_factory=list, repr=False)
    _blocks_done: int = 0

    def __post_init__(self):
        self.specs = [s if isinstance(s, PreRankSpec) else PreRankSpec.parse(s) for s in self.specs]
        if not self.specs:
            raise ConfigurationError("at least one pre-rank spec is required")
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate pre-rank specs: {names}")
        if self.grid is not None:
            self.grid = tuple(int(v) for v in self.grid)
            self.d = self.grid[0] * self.grid[1]
        if self.d is not None:
            for spec in self.specs:
                check_spec(spec, self.d, self.grid)
        for spec in self.specs:
            self.histograms[spec.name] = RankHistogram(self.m + 1, prerank=spec.name, seed=self.seed)
            if self.track_evalues:
                self.eprocesses[spec.name] = EProcess(
                    self.m, lag_k=self.lag_k, burn_in=self.burn_in,
                    alternative=self.alternative, name=spec.name,
                )

    @property
    def names(self):
        return [s.name for s in self.specs]

    @property
    def ell(self) -> int:
        return len(self.specs)

    @property
    def rank_matrix(self):
        """``(n_cases, ell)`` observation ranks; 0 marks a skipped case."""
        if not self._rank_blocks:
            return np.zeros((0, self.ell), dtype=np.int64)
        return np.vstack(self._rank_blocks)

    def decisions(self) -> dict:
        return {name: decide(proc, self.alpha, self.ell) for name, proc in self.eprocesses.items()}

    def report(self) -> dict:
        corr = rank_correlations(self)
        out = {
            "m": self.m,
            "n_cases": self.n_cases,
            "seed": self.seed,
            "lag_k": self.lag_k,
            "alpha": self.alpha,
            "burn_in": self.burn_in,
            "ell": self.ell,
            "grid": list(self.grid) if self.grid else None,
            "specs": [s.to_dict() for s in self.specs],
            "histograms": {},
            "correlations": {
                "specs": self.names,
                "matrix": [[None if np.isnan(v) else float(v) for v in row] for row in corr],
            },
        }
        for name, hist in self.histograms.items():
            item = hist.to_dict()
            if hist.n_ranked > 0:
                item["chi2"] = chi_square_flatness(hist)
                item["chi2_pvalue"] = flatness_pvalue(hist)
            out["histograms"][name] = item
        if self.track_evalues:
            out["decisions"] = {}
            for name, dec in self.decisions().items():
                proc = self.eprocesses[name]
                item = dec.to_dict()
                item["final_e"] = proc.value
                item["max_e"] = float(proc.trace.max()) if len(proc.trace) else None
                out["decisions"][name] = item
        return out

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)


def spec_rng(seed: int, spec: PreRankSpec, block: int):
    return np.random.default_rng([int(seed), spec_stream_key(spec.name), int(block)])


def evaluate_block(pool, run: EvaluationRun, block: int | None = None) -> EvaluationRun:
    """Add one ``(n, M + 1, d)`` block of cases to ``run``."""
    pool = np.ascontiguousarray(pool, dtype=np.float64)
    if pool.ndim != 3:
        raise InvalidInputError("pool must have shape (n, M + 1, d)")
    n, m1, d = pool.shape
    if m1 != run.m + 1:
        raise ConfigurationError(f"block has M = {m1 - 1}, run expects M = {run.m}")
    if run.d is None:
        run.d = d
        for spec in run.specs:
            check_spec(spec, d, run.grid)
    elif d != run.d:
        raise ConfigurationError(f"block has d = {d}, run expects d = {run.d}")
    if block is None:
        block = run._blocks_done
    cache = {}
    ranks_out = np.zeros((n, run.ell), dtype=np.int64)
    for col, spec in enumerate(run.specs):
        rng = spec_rng(run.seed, spec, block)
        values, skipped = prerank_values(pool, spec, rng, grid=run.grid, cache=cache)
        ranks, _ = randomized_ranks(values, rng)
        run.histograms[spec.name].add_ranks(ranks, skipped)
        if run.track_evalues:
            run.eprocesses[spec.name].update_many(ranks, skipped)
        ranks_out[:, col] = np.where(skipped, 0, ranks)
    run._rank_blocks.append(ranks_out)
    run.n_cases += n
    run._blocks_done += 1
    return run


def evaluate_blocks(blocks, run: EvaluationRun) -> EvaluationRun:
    for pool in blocks:
        evaluate_block(pool, run)
    return run


def evaluate_stream(cases, run: EvaluationRun, block_size: int = BLOCK_SIZE) -> EvaluationRun:
    """Evaluate an ordered iterable of :class:`EnsembleCase` objects."""
    buf = []
    layout = None
    for case in cases:
        this = (case.d, case.m, case.grid)
        if layout is None:
            layout = this
            if run.grid is None and case.grid is not None:
                run.grid = case.grid
                for spec in run.specs:
                    check_spec(spec, case.d, case.grid)
        elif this != layout:
            raise ConfigurationError(f"case layout {this} differs from stream layout {layout}")
        buf.append(case.pool)
        if len(buf) == block_size:
            evaluate_block(np.stack(buf), run)
            buf = []
    if buf:
        evaluate_block(np.stack(buf), run)
    return run


def rank_correlations(run: EvaluationRun):
    """Pairwise Pearson correlation of observation ranks across cases.

    Skipped cases are excluded pairwise. Entries with fewer than two common
    cases or a constant rank column are NaN; the diagonal is 1.
    """
    ranks = run.rank_matrix.astype(np.float64)
    ell = run.ell
    out = np.full((ell, ell), np.nan)
    for a in range(ell):
        out[a, a] = 1.0
        for b in range(a + 1, ell):
            keep = (ranks[:, a] > 0) & (ranks[:, b] > 0)
            if keep.sum() < 2:
                continue
            x = ranks[keep, a] - ranks[keep, a].mean()
            y = ranks[keep, b] - ranks[keep, b].mean()
            den = np.sqrt((x @ x) * (y @ y))
            if den > 0:
                out[a, b] = out[b, a] = float(np.clip((x @ y) / den, -1.0, 1.0))
    return out


def evaluate_cases(cases, specs, m=None, **kwargs) -> EvaluationRun:
    """Convenience wrapper: build a run from ``specs`` and evaluate ``cases``."""
    cases = list(cases)
    if not cases:
        raise InvalidInputError("no cases to evaluate")
    first: EnsembleCase = cases[0]
    run = EvaluationRun(specs=specs, m=first.m if m is None else m, grid=first.grid, **kwargs)
    return evaluate_stream(cases, run)
