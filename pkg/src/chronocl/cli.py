"""Command line: simulate, baseline, sweep, analyze, report, init-config."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import hypothesis as H
from .config import ConfigError, default_config, expand_grid, load_config
from .runner import emit_reports, read_records, run_full_retraining, run_simulation, run_sweep


def _fail(exc: BaseException, code: int = 1) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    rec = run_simulation(cfg)
    emit_reports([rec], args.out, args.min_eval_auc)
    print(json.dumps({"run_id": rec.run_id, "final_c_auc": rec.series.c_auc[-1],
                      "mean_fwt_auc": rec.series.mean_fwt_auc, "out": str(args.out)}))
    return 0


def cmd_baseline(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    rec = run_full_retraining(cfg)
    emit_reports([rec], args.out, args.min_eval_auc)
    print(json.dumps({"run_id": rec.run_id, "final_c_auc": rec.series.c_auc[-1],
                      "samples_processed": rec.ledger.samples_processed, "out": str(args.out)}))
    return 0


def cmd_sweep(args) -> int:
    try:
        doc = json.loads(Path(args.grid).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{args.grid}: invalid JSON ({e})") from e
    grid = expand_grid(doc)
    res = run_sweep(grid, jobs=args.jobs)
    if args.baseline:
        seen, base_grid = set(), []
        for c in grid:
            key = (c.seed, c.execution.monthly_batches)
            if key not in seen:
                seen.add(key)
                base_grid.append(c)
        extra = run_sweep(base_grid, jobs=args.jobs, baseline=True)
        res.records += extra.records
        res.failures += extra.failures
    if not res.records:
        raise RuntimeError(f"all {len(grid)} runs failed; first error: {res.failures[0]['error']}")
    emit_reports(res.records, args.out, args.min_eval_auc, res.failures)
    print(json.dumps({"runs": len(res.records), "failures": len(res.failures), "out": str(args.out)}))
    return 0


def _records(results: str):
    path = Path(results) / "runs.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    return read_records(path)


def cmd_analyze(args) -> int:
    recs = [r for r in _records(args.results) if r.method != "FullRetraining"]
    if not recs:
        raise ValueError(f"no continual-learning runs in {args.results}")
    doc = H.analyze(H.ResultSet([r.to_run() for r in recs], args.min_eval_auc))
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    if args.format != "csv":
        raise ValueError(f"unsupported format {args.format!r}")
    recs = _records(args.results)
    out = args.out or args.results
    paths = emit_reports(recs, out, args.min_eval_auc)
    print(json.dumps(sorted(str(p) for p in paths.values() if p.suffix == ".csv" and p.parent == Path(out))))
    return 0


def cmd_init_config(args) -> int:
    cfg = default_config(args.strategy, args.monthly_batches, args.seed)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chronocl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one continual-learning simulation")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("baseline", help="run the full-retraining baseline")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("sweep", help="run a grid of simulations")
    s.add_argument("--grid", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--baseline", action="store_true", help="also run full retraining per (seed, monthly_batches)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("analyze", help="transfer-decay statistics of a results directory")
    s.add_argument("--results", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("report", help="regenerate report files from runs.jsonl")
    s.add_argument("--results", required=True)
    s.add_argument("--format", default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("init-config", help="print a default run config")
    s.add_argument("--strategy", default="Naive")
    s.add_argument("--monthly-batches", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_init_config)

    for name in ("simulate", "baseline", "sweep", "analyze", "report"):
        sub.choices[name].add_argument("--min-eval-auc", type=float, default=H.DEFAULT_FILTER)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, RuntimeError, KeyError) as e:
        return _fail(e)


if __name__ == "__main__":
    sys.exit(main())
