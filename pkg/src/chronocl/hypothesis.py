"""Transfer-decay statistics over a collection of simulation runs.

Quantities: the largest next-release AUC lift over chance (``t_max``), the mean
ratio of two-step to one-step lift (``t_decay``) and the compounded k-step AUC
``0.5 + t_max * t_decay**k`` (``t_comp``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .metrics import AucMatrix, MetricSeries

CHANCE = 0.5
EPSILON_DENOM = 1e-3
DEFAULT_FILTER = 0.75


@dataclass
class Run:
    config: Any
    seed: int
    matrix: AucMatrix
    series: MetricSeries


@dataclass
class ResultSet:
    runs: list[Run] = field(default_factory=list)
    filter_threshold: float = DEFAULT_FILTER

    def __post_init__(self):
        if not 0.0 <= self.filter_threshold <= 1.0:
            raise ValueError("filter_threshold must be in [0, 1]")
        widths = {r.matrix.n_datasets for r in self.runs}
        if len(widths) > 1:
            raise ValueError(f"runs disagree on dataset count: {sorted(widths)}")


@dataclass
class DecayEstimate:
    t_max: float
    t_decay: float
    sample_count: int
    excluded_count: int = 0


def _next_lifts(matrix: AucMatrix):
    """(event, lift at next release, lift at the release after) per event with a future."""
    for t in range(matrix.n_events):
        fut = matrix.future(t)
        if not fut:
            continue
        one = matrix.values[t, fut[0]] - CHANCE
        two = matrix.values[t, fut[1]] - CHANCE if len(fut) > 1 else None
        yield t, one, two


def t_max(results: ResultSet) -> float:
    lifts = [one for r in results.runs for _, one, _ in _next_lifts(r.matrix)]
    if not lifts:
        raise ValueError("no (run, event) pair has a future dataset")
    return float(max(lifts))


def decay_ratios(results: ResultSet, threshold: float | None = None, eps: float = EPSILON_DENOM):
    """(ratios, excluded) over runs whose final eval AUC reaches ``threshold``."""
    ratios, excluded = [], 0
    for r in results.runs:
        if threshold is not None and r.series.final_eval_auc < threshold:
            continue
        for _, one, two in _next_lifts(r.matrix):
            if two is None:
                continue
            if abs(one) < eps:
                excluded += 1
                continue
            ratios.append(two / one)
    return ratios, excluded


def t_decay(results: ResultSet, threshold: float | None = None) -> DecayEstimate:
    """Filtered decay factor; pass ``threshold=0`` for the unfiltered value."""
    thr = results.filter_threshold if threshold is None else threshold
    ratios, excluded = decay_ratios(results, thr)
    if not ratios:
        raise ValueError(f"no eligible (run, event) pairs at eval-AUC threshold {thr}")
    try:
        tm = t_max(results)
    except ValueError:
        tm = float("nan")
    return DecayEstimate(tm, float(np.mean(ratios)), len(ratios), excluded)


def t_comp(t_max: float, t_decay: float, k: int) -> float:
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    return CHANCE + t_max * t_decay**k


def fwt_summary(results: ResultSet) -> tuple[float, float]:
    vals = [v for r in results.runs for v in r.series.fwt_auc if v is not None]
    if not vals:
        raise ValueError("no defined FWT-AUC values")
    return float(np.mean(vals)), float(np.std(vals))


def analyze(results: ResultSet, ks=range(7)) -> dict:
    """Summary document emitted by the ``analyze`` command."""
    out: dict[str, Any] = {"n_runs": len(results.runs), "min_eval_auc": results.filter_threshold}
    out["t_max"] = t_max(results)
    try:
        est = t_decay(results)
        out["t_decay"], out["eligible_pairs"], out["excluded_pairs"] = est.t_decay, est.sample_count, est.excluded_count
    except ValueError:
        out["t_decay"], out["eligible_pairs"] = None, 0
        out["excluded_pairs"] = decay_ratios(results, results.filter_threshold)[1]
    try:
        raw = t_decay(results, threshold=0.0)
        out["t_decay_unfiltered"] = raw.t_decay
        out["eligible_pairs_unfiltered"] = raw.sample_count
    except ValueError:
        out["t_decay_unfiltered"], out["eligible_pairs_unfiltered"] = None, 0
    if out["t_decay"] is not None:
        out["t_comp"] = {str(k): t_comp(out["t_max"], out["t_decay"], k) for k in ks}
    else:
        out["t_comp"] = None
    out["fwt_mean"], out["fwt_std"] = fwt_summary(results)
    return out
