"""Rank AUC and the chronological retention / forward-transfer metrics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .model import ModelState, logits


class UndefinedMetricError(ValueError):
    """AUC requested on data with a single class."""


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted one half, via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class AucMatrix:
    values: np.ndarray
    released_at: list[int]
    dataset_ids: list[int] | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.shape[1] != len(self.released_at):
            raise ValueError("one release event per dataset column required")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("AUC entries must lie in [0, 1]")
        if any(b < a for a, b in zip(self.released_at, self.released_at[1:])):
            raise ValueError("released_at must be non-decreasing")
        if self.dataset_ids is None:
            self.dataset_ids = list(range(self.n_datasets))

    @property
    def n_events(self) -> int:
        return self.values.shape[0]

    @property
    def n_datasets(self) -> int:
        return self.values.shape[1]

    def seen(self, t: int) -> list[int]:
        return [i for i, r in enumerate(self.released_at) if r <= t]

    def future(self, t: int) -> list[int]:
        """Unreleased datasets at event ``t`` in release order."""
        return sorted((i for i, r in enumerate(self.released_at) if r > t), key=lambda i: (self.released_at[i], i))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["event", *self.dataset_ids])
        for t, row in enumerate(self.values):
            w.writerow([t, *(repr(float(v)) for v in row)])
        return buf.getvalue()


def c_auc(matrix: AucMatrix, t: int) -> float:
    seen = matrix.seen(t)
    if not seen:
        raise ValueError(f"no dataset released by event {t}")
    return float(np.mean(matrix.values[t, seen]))


def fwt_auc(matrix: AucMatrix, t: int) -> float | None:
    fut = matrix.future(t)
    if not fut:
        return None
    return float(np.mean(matrix.values[t, fut]))


@dataclass
class MetricSeries:
    eval_auc: list[float]
    c_auc: list[float]
    fwt_auc: list[float | None]

    @classmethod
    def from_matrix(cls, matrix: AucMatrix) -> "MetricSeries":
        # Eval AUC is the mean over released datasets, i.e. the same row mean as C-AUC.
        c = [c_auc(matrix, t) for t in range(matrix.n_events)]
        return cls(eval_auc=list(c), c_auc=c, fwt_auc=[fwt_auc(matrix, t) for t in range(matrix.n_events)])

    @property
    def final_eval_auc(self) -> float:
        return self.eval_auc[-1]

    @property
    def mean_c_auc(self) -> float:
        return float(np.mean(self.c_auc))

    @property
    def mean_fwt_auc(self) -> float | None:
        vals = [v for v in self.fwt_auc if v is not None]
        return float(np.mean(vals)) if vals else None


def evaluate_model(model: ModelState, eval_sets: Sequence) -> np.ndarray:
    """One AucMatrix row: AUC of ``model`` on every dataset, released or not."""
    return np.array([auc(logits(model, s.features), s.labels) for s in eval_sets])
