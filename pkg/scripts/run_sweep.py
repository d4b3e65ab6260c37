"""Run a strategy x monthly-batches x seed grid and write all report files.

    python3 scripts/run_sweep.py --grid scripts/grids/full.json --out results/full --jobs 4 --baseline
"""
import argparse
import json
import logging
import time
from pathlib import Path

from chronocl.config import expand_grid
from chronocl.runner import emit_reports, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--grid", default=str(Path(__file__).parent / "grids" / "full.json"))
    ap.add_argument("--out", default="results/full")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--baseline", action="store_true", help="add one full-retraining run per (seed, monthly_batches)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    grid = expand_grid(json.loads(Path(args.grid).read_text()))
    t0 = time.perf_counter()
    res = run_sweep(grid, jobs=args.jobs)
    logging.info("%d continual-learning runs in %.1f s (%d failed)", len(res.records), time.perf_counter() - t0, len(res.failures))
    if args.baseline:
        cells = {(c.seed, c.execution.monthly_batches): c for c in grid}
        extra = run_sweep(list(cells.values()), jobs=args.jobs, baseline=True)
        res.records += extra.records
        res.failures += extra.failures
        logging.info("%d retraining runs done", len(extra.records))
    paths = emit_reports(res.records, args.out, failures=res.failures)
    print(json.dumps({"runs": len(res.records), "failures": len(res.failures), "files": len(paths), "out": args.out}))


if __name__ == "__main__":
    main()
