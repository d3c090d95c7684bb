"""Command-line interface: ``mvrank {simulate,evaluate,reorder,etest}``.

Every subcommand reads an optional JSON config (``--config``); command-line
flags override config values. A config looks like::

    {
      "seed": 7,
      "out": "runs/aniso",
      "simulate": {"preset": "grf-aniso", "scenario": {"n_cases": 2000},
                   "specs": ["location", "isotropy:h=1"], "write_archive": true},
      "evaluate": {"archive": "runs/aniso/archive.csv", "specs": "all"},
      "reorder": {"quantiles": "q.csv", "template": "raw", "raw": "raw.csv", "verify": true},
      "etest": {"ranks": "runs/aniso/ranks.csv", "m": 20}
    }

Shared keys (``seed``, ``out``, ``lag_k``, ``alpha``, ``burn_in``,
``alternative``) may sit at the top level or inside a command block.

Exit status: 0 on success, 2 on configuration or usage errors, 3 on data
errors (malformed archives, unreadable or unwritable files).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import archive as arc
from .errors import ArchiveError, ConfigurationError, InvalidInputError
from .evalues import EProcess, decide, rejection_threshold
from .pipeline import EvaluationRun, evaluate_block
from .preranks import PreRankSpec, check_spec, default_specs
from .reorder import margins_preserved, reorder, schaake_template
from .sim import BLOCK_SIZE, PRESETS, ScenarioConfig, ScenarioSampler, preset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

_REORDER_STREAM = 0xECC


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name.replace("=", "")).strip("_")


def split_specs(text: str):
    """Split a comma-separated spec list; ``key=value`` pieces attach to the previous spec.

    ``"location,dependence:h=2,lag=1;0,fte:t=1"`` gives three specs.
    """
    out = []
    for piece in (p.strip() for p in text.split(",")):
        if not piece:
            continue
        if "=" in piece and ":" not in piece and out:
            out[-1] += "," + piece
        else:
            out.append(piece)
    return out


def resolve_specs(value, grid):
    if value is None or value == "all" or value == ["all"]:
        return default_specs(grid is not None)
    if isinstance(value, str):
        value = split_specs(value)
    if not value:
        raise ConfigurationError("the pre-rank list is empty")
    specs = []
    for item in value:
        if isinstance(item, dict):
            specs.append(PreRankSpec.from_dict(item))
        elif isinstance(item, str):
            specs.append(PreRankSpec.parse(item))
        else:
            raise ConfigurationError(f"cannot read pre-rank spec {item!r}")
    return specs


def load_config(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigurationError("config must be a JSON object")
    return cfg


class Settings:
    """Merged view of flags, the command block and top-level config keys."""

    def __init__(self, args, cfg, command):
        self.args = args
        self.block = cfg.get(command, {}) or {}
        if not isinstance(self.block, dict):
            raise ConfigurationError(f"config block {command!r} must be an object")
        self.cfg = cfg

    def get(self, key, default=None, flag=None):
        val = getattr(self.args, flag or key, None)
        if val is not None:
            return val
        if key in self.block:
            return self.block[key]
        if key in self.cfg:
            return self.cfg[key]
        return default

    def require(self, key, flag=None):
        val = self.get(key, flag=flag)
        if val is None:
            raise ConfigurationError(f"missing required setting {key!r}")
        return val

    def seed(self) -> int:
        val = self.require("seed")
        try:
            return int(val)
        except (TypeError, ValueError):
            raise ConfigurationError(f"seed must be an integer, got {val!r}") from None

    def out(self) -> Path:
        return Path(self.require("out"))

    def path(self, key, flag=None) -> Path:
        p = Path(self.require(key, flag))
        if not p.exists():
            raise ConfigurationError(f"{key} path {p} does not exist")
        return p

    def run_kwargs(self):
        lag_k = int(self.get("lag_k", 1))
        alpha = float(self.get("alpha", 0.05))
        if lag_k < 1:
            raise ConfigurationError("lag_k must be a positive integer")
        if not 0 < alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        alternative = self.get("alternative", "beta_binomial")
        if alternative not in ("beta_binomial", "empirical", "uniform"):
            raise ConfigurationError(f"unknown alternative {alternative!r}")
        return dict(lag_k=lag_k, alpha=alpha, burn_in=int(self.get("burn_in", 100)),
                    alternative=alternative)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _ranks_csv(run: EvaluationRun) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case"] + run.names)
    for i, row in enumerate(run.rank_matrix.tolist(), start=1):
        w.writerow([i] + row)
    return buf.getvalue()


def write_outputs(run: EvaluationRun, out: Path, manifest: dict):
    """Histograms, traces, decisions, ranks, full report and manifest."""
    out.mkdir(parents=True, exist_ok=True)
    threshold = rejection_threshold(run.alpha, run.ell, run.lag_k)
    for name, hist in run.histograms.items():
        slug = _slug(name)
        arc.write_text(out / f"hist_{slug}.csv", hist.to_csv())
        arc.write_text(out / f"hist_{slug}.json", hist.to_json() + "\n")
        if run.track_evalues:
            arc.write_text(out / f"trace_{slug}.csv", run.eprocesses[name].trace_csv(threshold))
    if run.track_evalues:
        arc.write_text(out / "decisions.json", _dump(run.report()["decisions"]))
    arc.write_text(out / "ranks.csv", _ranks_csv(run))
    arc.write_text(out / "report.json", run.report_json() + "\n")
    arc.write_text(out / "manifest.json", _dump(manifest))


def cmd_simulate(args, cfg):
    s = Settings(args, cfg, "simulate")
    seed = s.seed()
    name = s.get("preset")
    overrides = dict(s.get("scenario", {}) or {})
    overrides["seed"] = seed
    if args.n_cases is not None:
        overrides["n_cases"] = args.n_cases
    try:
        config = preset(name, **overrides) if name else ScenarioConfig(**overrides)
    except TypeError as exc:
        raise ConfigurationError(f"bad scenario settings: {exc}") from None
    specs = resolve_specs(s.get("specs"), config.grid)
    kw = s.run_kwargs()
    out = s.out()
    run = EvaluationRun(specs=specs, m=config.m, seed=seed, grid=config.grid, d=config.dim, **kw)
    sampler = ScenarioSampler(config)
    write_archive = bool(s.get("write_archive", True))
    out.mkdir(parents=True, exist_ok=True)
    if write_archive:
        with arc.ArchiveWriter(out / "archive.csv", config.dim, config.m, config.grid,
                               variable=s.get("variable", "x"), units=s.get("units", "1")) as w:
            for pool in sampler.blocks():
                w.write_block(pool)
                evaluate_block(pool, run)
    else:
        for pool in sampler.blocks():
            evaluate_block(pool, run)
    manifest = {
        "command": "simulate",
        "scenario": config.to_dict(),
        "truth": config.truth_params(),
        "forecast": config.forecast_params(),
        "seed": seed,
        "specs": [sp.to_dict() for sp in specs],
        "spec_names": run.names,
        **kw,
    }
    write_outputs(run, out, manifest)
    return EXIT_OK


def cmd_evaluate(args, cfg):
    s = Settings(args, cfg, "evaluate")
    seed = s.seed()
    path = s.path("archive")
    head = arc.read_header(path)
    grid = tuple(head["grid"]) if head.get("grid") else None
    specs = resolve_specs(s.get("specs"), grid)
    for sp in specs:
        check_spec(sp, head["d"], grid)
    kw = s.run_kwargs()
    out = s.out()
    run = EvaluationRun(specs=specs, m=head["m"], seed=seed, grid=grid, d=head["d"], **kw)
    buf = []
    for _, pool in arc.iter_cases(path, head):
        buf.append(pool)
        if len(buf) == BLOCK_SIZE:
            evaluate_block(np.stack(buf), run)
            buf = []
    if buf:
        evaluate_block(np.stack(buf), run)
    manifest = {
        "command": "evaluate",
        "archive": path.name,
        "header": head,
        "seed": seed,
        "specs": [sp.to_dict() for sp in specs],
        "spec_names": run.names,
        **kw,
    }
    write_outputs(run, out, manifest)
    return EXIT_OK


def _template_source(s: Settings, head):
    src = s.get("template", "raw")
    if src == "raw":
        raw_path = s.path("raw")
        raw_head = arc.read_header(raw_path)
        if (raw_head["d"], raw_head["m"], raw_head["n_cases"]) != (head["d"], head["m"], head["n_cases"]):
            raise ConfigurationError("raw ensemble archive does not match the quantile archive layout")
        return "raw", arc.iter_cases(raw_path, raw_head)
    if isinstance(src, str) and src.startswith("historical:"):
        hist_path = Path(src.split(":", 1)[1])
        if not hist_path.exists():
            raise ConfigurationError(f"historical archive {hist_path} does not exist")
        hist_head = arc.read_header(hist_path)
        if hist_head["d"] != head["d"]:
            raise ConfigurationError("historical archive dimension differs from the quantile archive")
        _, _, pools = arc.load_archive(hist_path)
        return "historical", pools[:, 0, :]
    raise ConfigurationError(f"template source must be 'raw' or 'historical:<path>', got {src!r}")


def cmd_reorder(args, cfg):
    s = Settings(args, cfg, "reorder")
    seed = s.seed()
    qpath = s.path("quantiles")
    head = arc.read_header(qpath)
    verify = bool(s.get("verify", False))
    kind, source = _template_source(s, head)
    out = s.out()
    m = head["m"]
    failures = []
    with arc.ArchiveWriter(out / "reordered.csv", head["d"], m, head.get("grid"),
                           variable=head.get("variable", "x"), units=head.get("units", "1"),
                           content="ensemble") as w:
        raw_iter = source if kind == "raw" else None
        for idx, (t, qpool) in enumerate(arc.iter_cases(qpath, head)):
            rng = np.random.default_rng([seed, _REORDER_STREAM, idx])
            quant = qpool[1:].T
            if np.any(np.diff(quant, axis=1) < 0):
                raise ArchiveError(f"{qpath.name}: quantiles at time {t} are not sorted in every dimension")
            if kind == "raw":
                _, rpool = next(raw_iter)
                template = rpool[1:].T
            else:
                template = schaake_template(source, m, rng)
            members = reorder(quant, template, rng)
            if verify and not margins_preserved(quant, members):
                failures.append(int(t))
            pool = np.vstack([qpool[:1], members])
            w.write_case(t, pool)
    manifest = {"command": "reorder", "quantiles": qpath.name, "template": s.get("template", "raw"),
                "seed": seed, "n_cases": head["n_cases"]}
    if verify:
        manifest["verify"] = {"margins_preserved": not failures, "failed_times": failures}
    arc.write_text(out / "manifest.json", _dump(manifest))
    if failures:
        print(f"margin check failed for {len(failures)} cases", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _read_ranks(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise ArchiveError(f"cannot read {path}: {exc.strerror}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:1] != ["case"] or len(rows[0]) < 2:
        raise ArchiveError(f"{path.name} line 1: column header must start with 'case'")
    names = rows[0][1:]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            raise ArchiveError(f"{path.name} line {lineno}: expected {len(rows[0])} fields, found {len(row)}")
        vals = []
        for name, cell in zip(names, row[1:]):
            try:
                vals.append(int(cell))
            except ValueError:
                raise ArchiveError(f"{path.name} line {lineno} field {name!r}: not an integer: {cell!r}") from None
        data.append(vals)
    return names, np.asarray(data, dtype=np.int64).reshape(-1, len(names))


def cmd_etest(args, cfg):
    """Sequential tests on a rank file (``case,<spec>...``; 0 marks a skipped case)."""
    s = Settings(args, cfg, "etest")
    path = s.path("ranks", flag="ranks")
    m = s.get("m")
    if m is None:
        raise ConfigurationError("etest needs the ensemble size 'm'")
    m = int(m)
    kw = s.run_kwargs()
    out = s.out()
    names, ranks = _read_ranks(path)
    wanted = s.get("specs")
    if wanted is not None:
        wanted = [PreRankSpec.parse(x).name for x in
                  (split_specs(wanted) if isinstance(wanted, str) else wanted)]
        missing = [w for w in wanted if w not in names]
        if missing:
            raise ConfigurationError(f"specs not in rank file: {missing}")
        if not wanted:
            raise ConfigurationError("the pre-rank list is empty")
        cols = [names.index(w) for w in wanted]
        names = wanted
        ranks = ranks[:, cols]
    bad = (ranks < 0) | (ranks > m + 1)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ArchiveError(f"{path.name} line {i + 2} field {names[j]!r}: rank {ranks[i, j]} outside 0..{m + 1}")
    ell = len(names)
    threshold = rejection_threshold(kw["alpha"], ell, kw["lag_k"])
    out.mkdir(parents=True, exist_ok=True)
    decisions = {}
    for j, name in enumerate(names):
        proc = EProcess(m, lag_k=kw["lag_k"], burn_in=kw["burn_in"],
                        alternative=kw["alternative"], name=name)
        col = ranks[:, j]
        proc.update_many(np.where(col == 0, 1, col), col == 0)
        arc.write_text(out / f"trace_{_slug(name)}.csv", proc.trace_csv(threshold))
        item = decide(proc, kw["alpha"], ell).to_dict()
        item["final_e"] = proc.value
        item["max_e"] = float(proc.trace.max()) if len(proc.trace) else None
        decisions[name] = item
    arc.write_text(out / "decisions.json", _dump(decisions))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "reorder": cmd_reorder,
    "etest": cmd_etest,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config")
    common.add_argument("--seed", type=int, help="master seed (required here or in the config)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--specs", metavar="LIST",
                        help="comma-separated pre-ranks, e.g. 'location,dependence:h=1,fte:t=1' or 'all'")
    common.add_argument("--lag-k", dest="lag_k", type=int, metavar="INT", help="forecast lead time k")
    common.add_argument("--alpha", type=float, metavar="FLOAT", help="test level")

    parser = argparse.ArgumentParser(prog="mvrank", description="Multivariate rank histograms and e-value calibration tests.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a scenario and evaluate it")
    p.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS), help="built-in scenario")
    p.add_argument("--n-cases", dest="n_cases", type=int, metavar="INT")

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a forecast archive")
    p.add_argument("--archive", metavar="PATH")

    p = sub.add_parser("reorder", parents=[common], help="ECC or Schaake reordering of a quantile archive")
    p.add_argument("--quantiles", metavar="PATH")
    p.add_argument("--template", metavar="SRC", help="'raw' or 'historical:<path>'")
    p.add_argument("--raw", metavar="PATH", help="raw ensemble archive for ECC")
    p.add_argument("--verify", action="store_true", default=None, help="check marginal multisets")

    p = sub.add_parser("etest", parents=[common], help="e-value tests on a rank file")
    p.add_argument("--ranks", metavar="PATH")
    p.add_argument("--m", type=int, metavar="INT", help="ensemble size")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "specs", None) is not None and not args.specs.strip():
        parser.error("--specs must not be empty")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArchiveError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
