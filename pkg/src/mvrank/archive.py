"""Forecast archives: line-oriented CSV records plus a JSON sidecar header.

For an archive ``cases.csv`` the header lives in ``cases.header.json``::

    {"format": "mvrank-archive", "version": 1, "d": 900, "grid": [30, 30],
     "m": 20, "n_cases": 10000, "variable": "z", "units": "1", "content": "ensemble"}

The CSV has a header row ``time,member,x0,...,x{d-1}`` followed by ``M + 1``
rows per case: member 0 is the observation, members ``1..M`` the forecast
(or, for ``content = "quantiles"``, the sorted per-dimension quantiles).
Grid fields are flattened row-major, so ``x{i*q + j}`` is grid point
``(i, j)`` and the first index ``i`` is the horizontal direction. Time
indices are integers and strictly increasing across cases. Floats are
written with ``repr`` so values round-trip exactly.
"""
from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import ArchiveError

FORMAT = "mvrank-archive"
VERSION = 1
CONTENTS = ("ensemble", "quantiles", "observations")


def header_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".header.json")


@contextmanager
def atomic_open(path, mode="w"):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text: str):
    with atomic_open(path) as fh:
        fh.write(text)


def make_header(d, m, n_cases, grid=None, variable="x", units="1", content="ensemble", **extra):
    if content not in CONTENTS:
        raise ArchiveError(f"unknown archive content {content!r}")
    if grid is not None:
        grid = [int(grid[0]), int(grid[1])]
        if grid[0] * grid[1] != d:
            raise ArchiveError(f"grid {grid} does not match d = {d}")
    head = {
        "format": FORMAT, "version": VERSION, "d": int(d), "grid": grid, "m": int(m),
        "n_cases": int(n_cases), "variable": str(variable), "units": str(units),
        "content": content,
    }
    head.update(extra)
    return head


def _fmt_row(time, member, values):
    return f"{time},{member}," + ",".join(map(repr, values.tolist())) + "\n"


class ArchiveWriter:
    """Streams ``(n, M + 1, d)`` blocks to CSV; the sidecar is written on close."""

    def __init__(self, path, d, m, grid=None, variable="x", units="1", content="ensemble", **extra):
        self.path = Path(path)
        self.header = make_header(d, m, 0, grid, variable, units, content, **extra)
        self._ctx = atomic_open(self.path)
        self._fh = None
        self._last_time = None
        self.n_cases = 0

    def __enter__(self):
        self._fh = self._ctx.__enter__()
        d = self.header["d"]
        self._fh.write("time,member," + ",".join(f"x{i}" for i in range(d)) + "\n")
        return self

    def write_case(self, time: int, pool):
        pool = np.asarray(pool, dtype=np.float64)
        m1, d = self.header["m"] + 1, self.header["d"]
        if pool.shape != (m1, d):
            raise ArchiveError(f"case at time {time} has shape {pool.shape}, expected {(m1, d)}")
        time = int(time)
        if self._last_time is not None and time <= self._last_time:
            raise ArchiveError(f"time {time} does not increase after {self._last_time}")
        write = self._fh.write
        for k in range(m1):
            write(_fmt_row(time, k, pool[k]))
        self._last_time = time
        self.n_cases += 1

    def write_block(self, pools, times=None):
        pools = np.asarray(pools, dtype=np.float64)
        if times is None:
            start = 0 if self._last_time is None else self._last_time + 1
            times = range(start, start + pools.shape[0])
        for t, pool in zip(times, pools):
            self.write_case(t, pool)

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.header["n_cases"] = self.n_cases
            write_text(header_path(self.path), json.dumps(self.header, indent=2, sort_keys=True) + "\n")
        return self._ctx.__exit__(exc_type, exc, tb)


def write_archive(path, pools, times=None, grid=None, variable="x", units="1", content="ensemble", **extra):
    pools = np.asarray(pools, dtype=np.float64)
    if pools.ndim != 3:
        raise ArchiveError("pools must have shape (n, M + 1, d)")
    n, m1, d = pools.shape
    with ArchiveWriter(path, d, m1 - 1, grid, variable, units, content, **extra) as w:
        w.write_block(pools, times)
    return w.header


def read_header(path) -> dict:
    hp = header_path(path)
    try:
        head = json.loads(hp.read_text())
    except FileNotFoundError:
        raise ArchiveError(f"{hp}: sidecar header not found") from None
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{hp}: header is not valid JSON ({exc})") from None
    if not isinstance(head, dict):
        raise ArchiveError(f"{hp}: header must be a JSON object")
    if head.get("format") != FORMAT:
        raise ArchiveError(f"{hp}: field 'format' must be {FORMAT!r}")
    for key in ("d", "m", "n_cases"):
        val = head.get(key)
        if not isinstance(val, int) or isinstance(val, bool) or val < (0 if key == "n_cases" else 1):
            raise ArchiveError(f"{hp}: field {key!r} must be a positive integer, got {val!r}")
    grid = head.get("grid")
    if grid is not None:
        if (not isinstance(grid, list) or len(grid) != 2
                or not all(isinstance(g, int) and g >= 2 for g in grid)
                or grid[0] * grid[1] != head["d"]):
            raise ArchiveError(f"{hp}: field 'grid' must be [p, q] with p * q = d")
    head.setdefault("content", "ensemble")
    if head["content"] not in CONTENTS:
        raise ArchiveError(f"{hp}: field 'content' must be one of {CONTENTS}")
    return head


def iter_cases(path, header=None):
    """Yield ``(time, pool)`` per case; ``pool`` is ``(M + 1, d)``.

    Raises :class:`ArchiveError` naming the offending line and field.
    """
    path = Path(path)
    head = read_header(path) if header is None else header
    d, m1 = head["d"], head["m"] + 1
    name = path.name
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise ArchiveError(f"{path}: archive not found") from None
    with fh:
        first = fh.readline().rstrip("\r\n")
        cols = first.split(",")
        if cols[:2] != ["time", "member"] or len(cols) != d + 2:
            raise ArchiveError(f"{name} line 1: column header must be time,member,x0..x{d - 1}")
        last_time = None
        cur_time = None
        rows = []
        count = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d + 2:
                raise ArchiveError(f"{name} line {lineno}: expected {d + 2} fields, found {len(parts)}")
            try:
                t = int(parts[0])
            except ValueError:
                raise ArchiveError(f"{name} line {lineno} field 'time': not an integer: {parts[0]!r}") from None
            try:
                k = int(parts[1])
            except ValueError:
                raise ArchiveError(f"{name} line {lineno} field 'member': not an integer: {parts[1]!r}") from None
            try:
                vals = np.array(parts[2:], dtype=np.float64)
            except ValueError:
                bad = next(i for i, s in enumerate(parts[2:]) if not _is_float(s))
                raise ArchiveError(
                    f"{name} line {lineno} field 'x{bad}': not a number: {parts[2 + bad]!r}") from None
            if not np.all(np.isfinite(vals)):
                bad = int(np.flatnonzero(~np.isfinite(vals))[0])
                raise ArchiveError(f"{name} line {lineno} field 'x{bad}': value is not finite")
            if k == 0:
                if rows:
                    raise ArchiveError(f"{name} line {lineno} field 'member': case at time {cur_time} "
                                       f"has {len(rows)} rows, expected {m1}")
                if last_time is not None and t <= last_time:
                    raise ArchiveError(f"{name} line {lineno} field 'time': {t} does not increase "
                                       f"after {last_time}")
                cur_time = t
            elif t != cur_time:
                raise ArchiveError(f"{name} line {lineno} field 'time': {t} inside case {cur_time}")
            if k != len(rows):
                raise ArchiveError(f"{name} line {lineno} field 'member': expected {len(rows)}, found {k}")
            rows.append(vals)
            if len(rows) == m1:
                yield cur_time, np.stack(rows)
                last_time = cur_time
                rows = []
                count += 1
        if rows:
            raise ArchiveError(f"{name}: truncated case at time {cur_time} ({len(rows)} of {m1} rows)")
        if count != head["n_cases"]:
            raise ArchiveError(f"{name}: header field 'n_cases' says {head['n_cases']}, found {count}")


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_archive(path):
    """``(header, times (n,), pools (n, M + 1, d))``."""
    head = read_header(path)
    times, pools = [], []
    for t, pool in iter_cases(path, head):
        times.append(t)
        pools.append(pool)
    d, m1 = head["d"], head["m"] + 1
    arr = np.stack(pools) if pools else np.zeros((0, m1, d))
    return head, np.asarray(times, dtype=np.int64), arr
