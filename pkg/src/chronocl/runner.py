"""Simulation loop, full-retraining baseline, sweeps and report files."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import hypothesis as H
from . import model as M
from .config import SimulationConfig
from .metrics import AucMatrix, MetricSeries, evaluate_model
from .stream import (
    STREAM_INIT, STREAM_SELECT, STREAM_STRATEGY, STREAM_TRAIN, Batch,
    extract_batch, make_eval_sets, select_dataset, stream_rng,
)
from .strategies import consolidate, init_state, step

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass
class ComputeLedger:
    samples_processed: int = 0
    unique_samples: int = 0
    parameter_updates: int = 0
    gradient_samples: int = 0  # every sample passed through a backward pass

    def add_batch(self, n: int) -> None:
        self.samples_processed += n
        self.unique_samples += n


@dataclass
class RunRecord:
    config: SimulationConfig
    method: str
    eval_months: list[int]
    matrix: AucMatrix
    series: MetricSeries
    ledger: ComputeLedger
    wall_clock_s: float = 0.0
    error: str | None = None

    @property
    def run_id(self) -> str:
        rid = self.config.run_id
        return rid if self.method != "FullRetraining" else rid.replace(self.config.strategy.kind, "FullRetraining", 1)

    @property
    def kind(self) -> str:
        return self.method

    def events(self) -> list[dict]:
        """One JSON-ready object per evaluation event (no wall-clock: deterministic)."""
        out = []
        for t, month in enumerate(self.eval_months):
            out.append({
                "run_id": self.run_id,
                "strategy": self.method,
                "monthly_batches": self.config.execution.monthly_batches,
                "seed": self.config.seed,
                "event": t,
                "month": month,
                "eval_auc": self.series.eval_auc[t],
                "c_auc": self.series.c_auc[t],
                "fwt_auc": self.series.fwt_auc[t],
                "row": [float(v) for v in self.matrix.values[t]],
                "released_at": list(self.matrix.released_at),
                "ledger": asdict(self.ledger),
                "config": self.config.to_dict(),
            })
        return out

    def to_run(self) -> H.Run:
        return H.Run(self.config, self.config.seed, self.matrix, self.series)


def _check_finite(params: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(params)):
        raise SimulationError(f"non-finite parameters after {where}")


def run_simulation(config: SimulationConfig, observer: Callable | None = None) -> RunRecord:
    """Monthly continual-learning loop with evaluation at each scheduled event.

    ``observer(month, state)`` is called after every strategy step.
    """
    t0 = time.perf_counter()
    seed = config.seed
    schedule = config.schedule.build(seed)
    ex = config.execution
    arch = config.model.arch(config.schedule.dim)
    eval_sets = make_eval_sets(schedule, ex.eval_per_class, seed)
    select_rng = stream_rng(seed, STREAM_SELECT)
    train_rng = stream_rng(seed, STREAM_TRAIN)
    model = M.init_model(arch, stream_rng(seed, STREAM_INIT), config.model.init_scale)
    state = init_state(config.strategy, model, stream_rng(seed, STREAM_STRATEGY), ex.batch_size)
    ledger = ComputeLedger()
    releases = set(schedule.release_months)
    eval_months = set(schedule.eval_events)
    rows = []
    for month in range(schedule.first_month, schedule.horizon_months):
        for _ in range(ex.monthly_batches):
            gen_id = select_dataset(month, schedule, select_rng)
            batch = extract_batch(gen_id, schedule, ex.batch_size, train_rng)
            state = step(state, batch)
            if observer is not None:
                observer(month, state)
            ledger.add_batch(len(batch))
            ledger.parameter_updates += 1
        _check_finite(state.model.params, f"month {month}")
        if month in releases:
            # anchor once the newly released generator has had a month of training
            state = consolidate(state)
        if month in eval_months:
            rows.append(evaluate_model(state.eval_model, eval_sets))
    ledger.gradient_samples = state.grad_samples
    matrix = AucMatrix(np.array(rows), schedule.released_at_events(), [g.id for g in schedule.generators])
    return RunRecord(config, config.strategy.kind, list(schedule.eval_events), matrix,
                     MetricSeries.from_matrix(matrix), ledger, time.perf_counter() - t0)


def retrain_from_scratch(config: SimulationConfig, schedule, released, rng, ledger: ComputeLedger) -> M.ModelState:
    """Fresh model trained on balanced batches from every released generator."""
    ex = config.execution
    arch = config.model.arch(config.schedule.dim)
    model = M.init_model(arch, stream_rng(config.seed, STREAM_INIT), config.model.init_scale)
    opt = M.OptimizerState.zeros(arch.n_params, lr=ex.retrain_lr, weight_decay=config.strategy.weight_decay)
    iters = ex.retrain_iterations
    for it in range(iters):
        parts = [extract_batch(g.id, schedule, ex.retrain_per_dataset, rng) for g in released]
        batch = Batch(np.vstack([p.features for p in parts]), np.concatenate([p.labels for p in parts]), -1)
        _, grad = M.loss_and_grad(model, batch)
        model, opt = M.adamw_step(model, opt, grad, lr=M.cosine_lr(it, ex.retrain_lr, iters))
        ledger.add_batch(len(batch))
        ledger.gradient_samples += len(batch)
        ledger.parameter_updates += 1
    _check_finite(model.params, "retraining")
    return model


def run_full_retraining(config: SimulationConfig) -> RunRecord:
    """Baseline: retrain from initialisation on all released data at every release."""
    t0 = time.perf_counter()
    seed = config.seed
    schedule = config.schedule.build(seed)
    ex = config.execution
    eval_sets = make_eval_sets(schedule, ex.eval_per_class, seed)
    train_rng = stream_rng(seed, STREAM_TRAIN)
    ledger = ComputeLedger()
    releases = set(schedule.release_months)
    model = None
    rows = []
    for month in schedule.eval_events:
        if month in releases:
            model = retrain_from_scratch(config, schedule, schedule.released(month), train_rng, ledger)
        rows.append(evaluate_model(model, eval_sets))
    matrix = AucMatrix(np.array(rows), schedule.released_at_events(), [g.id for g in schedule.generators])
    return RunRecord(config, "FullRetraining", list(schedule.eval_events), matrix,
                     MetricSeries.from_matrix(matrix), ledger, time.perf_counter() - t0)


def _execute(item: tuple[SimulationConfig, str]) -> RunRecord | tuple[SimulationConfig, str, str]:
    cfg, method = item
    try:
        return run_full_retraining(cfg) if method == "baseline" else run_simulation(cfg)
    except Exception as e:  # one failing run must not sink the sweep
        return (cfg, method, f"{type(e).__name__}: {e}")


@dataclass
class SweepResult:
    records: list[RunRecord] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def result_set(self, threshold: float = H.DEFAULT_FILTER, include_baseline: bool = False) -> H.ResultSet:
        runs = [r.to_run() for r in self.records if include_baseline or r.method != "FullRetraining"]
        return H.ResultSet(runs, threshold)


def run_sweep(grid: Sequence[SimulationConfig], jobs: int = 1, baseline: bool = False) -> SweepResult:
    """Run every config; output order is canonical (sorted by run id) whatever ``jobs`` is."""
    if not grid:
        raise ValueError("empty sweep grid")
    method = "baseline" if baseline else "cl"
    items = sorted(((c, method) for c in grid), key=lambda it: it[0].run_id)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_execute, items, chunksize=1))
    else:
        outs = [_execute(it) for it in items]
    res = SweepResult()
    for out in outs:
        if isinstance(out, RunRecord):
            res.records.append(out)
        else:
            cfg, _, err = out
            log.warning("run %s failed: %s", cfg.run_id, err)
            res.failures.append({"run_id": cfg.run_id, "error": err, "config": cfg.to_dict()})
    return res


# -- persistence -------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def records_jsonl(records: Sequence[RunRecord]) -> str:
    lines = [json.dumps(ev, sort_keys=True) for r in records for ev in r.events()]
    return "\n".join(lines) + ("\n" if lines else "")


def read_records(path: str | Path) -> list[RunRecord]:
    """Rebuild RunRecords from a runs.jsonl file (wall-clock is not stored)."""
    by_run: dict[str, list[dict]] = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                ev = json.loads(line)
                by_run.setdefault(ev["run_id"], []).append(ev)
    records = []
    for rid in sorted(by_run):
        evs = sorted(by_run[rid], key=lambda e: e["event"])
        cfg = SimulationConfig.from_dict(evs[0]["config"])
        matrix = AucMatrix(np.array([e["row"] for e in evs]), evs[0]["released_at"])
        records.append(RunRecord(cfg, evs[0]["strategy"], [e["month"] for e in evs], matrix,
                                 MetricSeries.from_matrix(matrix), ComputeLedger(**evs[-1]["ledger"])))
    return records


def summary_rows(records: Sequence[RunRecord]) -> list[list]:
    """Strategy x monthly_batches means of final eval AUC, mean C-AUC, mean FWT-AUC."""
    groups: dict[tuple[str, int], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.config.execution.monthly_batches), []).append(r)
    rows = [["strategy", "monthly_batches", "n_runs", "auc", "mean_c_auc", "mean_fwt_auc",
             "samples_processed", "parameter_updates"]]
    for (kind, mb) in sorted(groups):
        rs = groups[(kind, mb)]
        fwts = [r.series.mean_fwt_auc for r in rs if r.series.mean_fwt_auc is not None]
        rows.append([
            kind, mb, len(rs),
            _fmt(np.mean([r.series.final_eval_auc for r in rs])),
            _fmt(np.mean([r.series.mean_c_auc for r in rs])),
            _fmt(np.mean(fwts) if fwts else None),
            int(np.mean([r.ledger.samples_processed for r in rs])),
            int(np.mean([r.ledger.parameter_updates for r in rs])),
        ])
    return rows


def c_auc_series_rows(records: Sequence[RunRecord], kind: str) -> list[list]:
    rows = [["run_id", "monthly_batches", "seed", "event", "month", "c_auc", "fwt_auc"]]
    for r in records:
        if r.method != kind:
            continue
        for t, m in enumerate(r.eval_months):
            rows.append([r.run_id, r.config.execution.monthly_batches, r.config.seed, t, m,
                         _fmt(r.series.c_auc[t]), _fmt(r.series.fwt_auc[t])])
    return rows


def per_dataset_rows(records: Sequence[RunRecord]) -> list[list]:
    width = max(r.matrix.n_datasets for r in records)
    rows = [["run_id", "strategy", "monthly_batches", "seed", "event", "month",
             *[f"dataset_{i}" for i in range(width)]]]
    for r in records:
        for t, m in enumerate(r.eval_months):
            rows.append([r.run_id, r.method, r.config.execution.monthly_batches, r.config.seed, t, m,
                         *[_fmt(v) for v in r.matrix.values[t]]])
    return rows


def emit_reports(records: Sequence[RunRecord], out_dir: str | Path, threshold: float = H.DEFAULT_FILTER,
                 failures: Sequence[dict] = ()) -> dict[str, Path]:
    """Write runs.jsonl, per-strategy C-AUC CSVs, per-dataset CSV, hypothesis.json, summary.csv."""
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    records = sorted(records, key=lambda r: r.run_id)
    paths: dict[str, Path] = {}

    def write(name: str, text: str) -> None:
        p = out / name
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
        except OSError as e:
            raise OSError(f"cannot write {p}: {e}") from e
        paths[name] = p

    write("runs.jsonl", records_jsonl(records))
    for kind in sorted({r.method for r in records}):
        write(f"c_auc_{kind}.csv", _csv(c_auc_series_rows(records, kind)))
    write("per_dataset_auc.csv", _csv(per_dataset_rows(records)))
    cl = [r.to_run() for r in records if r.method != "FullRetraining"] or [r.to_run() for r in records]
    try:
        doc = H.analyze(H.ResultSet(cl, threshold))
    except ValueError as e:
        doc = {"error": str(e)}
    write("hypothesis.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write("summary.csv", _csv(summary_rows(records)))
    for r in records:
        write(f"matrices/{r.run_id}.csv", r.matrix.to_csv())
    if failures:
        write("failures.json", json.dumps(list(failures), indent=2, sort_keys=True) + "\n")
    return paths
