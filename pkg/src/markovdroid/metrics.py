"""Evasion robustness, defense reciprocal rank, reliability, recall and F1."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .models import Prediction, labels_from_proba


class EmptySetError(ValueError):
    pass


@dataclass(frozen=True)
class RankedPrediction:
    p_true: float  # probability the model gave the true class
    rank: int  # 1 if the true class is the predicted one, else 2

    def __post_init__(self):
        if self.rank not in (1, 2):
            raise ValueError("rank must be 1 or 2")
        if not 0.0 <= self.p_true <= 1.0:
            raise ValueError("probability must lie in [0, 1]")

    @classmethod
    def from_prediction(cls, true_label: int, pred: Prediction) -> "RankedPrediction":
        return cls(pred.prob_of(true_label), 1 if pred.label == true_label else 2)


@dataclass(frozen=True)
class EvaluationSet:
    """True labels and the model's p_malicious per test sample."""

    y_true: np.ndarray
    p_malicious: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y_true, dtype=np.int64)
        p = np.asarray(self.p_malicious, dtype=np.float64)
        if y.shape != p.shape or y.ndim != 1:
            raise ValueError("y_true and p_malicious must be 1-D and the same length")
        object.__setattr__(self, "y_true", y)
        object.__setattr__(self, "p_malicious", p)

    @classmethod
    def from_predictions(cls, y_true: Sequence[int], preds: Iterable[Prediction]) -> "EvaluationSet":
        return cls(np.asarray(y_true), np.array([p.p_malicious for p in preds], dtype=np.float64))

    def __len__(self) -> int:
        return len(self.y_true)

    @property
    def y_pred(self) -> np.ndarray:
        return labels_from_proba(self.p_malicious)

    @property
    def p_true(self) -> np.ndarray:
        return np.where(self.y_true == 1, self.p_malicious, 1.0 - self.p_malicious)

    @property
    def ranks(self) -> np.ndarray:
        return np.where(self.y_pred == self.y_true, 1, 2)

    @property
    def entropies(self) -> np.ndarray:
        return sample_entropy(self.p_malicious)

    def _require_nonempty(self):
        if len(self) == 0:
            raise EmptySetError("metric undefined on an empty set")


def evasion_robustness(ev: EvaluationSet) -> float:
    """Fraction of malicious samples still flagged malicious."""
    ev._require_nonempty()
    if (ev.y_true != 1).any():
        raise ValueError("evasion robustness is defined on malicious samples only")
    return float(ev.y_pred.mean())


def drr_sample(p_true, rank) -> float | np.ndarray:
    """(p_true + 1) / (rank + 1): in [1/2, 1] at rank 1 and [1/3, 1/2] at rank 2."""
    out = (np.asarray(p_true, dtype=np.float64) + 1.0) / (np.asarray(rank, dtype=np.float64) + 1.0)
    return float(out) if out.ndim == 0 else out


def drr_overall(ev: EvaluationSet) -> float:
    ev._require_nonempty()
    return float(np.mean(drr_sample(ev.p_true, ev.ranks)))


def sample_entropy(p) -> float | np.ndarray:
    """Binary Shannon entropy in nats, with 0 ln 0 = 0.

    Nats rather than bits: all-0.5 predictions then score a reliability of
    1 - ln 2 (about 0.307) instead of 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0) - np.where(q > 0, q * np.log(q), 0.0)
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


def model_reliability(ev: EvaluationSet) -> float:
    """1 minus the mean per-sample entropy."""
    ev._require_nonempty()
    return float(1.0 - np.mean(ev.entropies))


def recall_f1(ev: EvaluationSet) -> tuple[float, float]:
    """Malicious is the positive class; any zero denominator yields 0."""
    ev._require_nonempty()
    pred = ev.y_pred
    tp = int(((pred == 1) & (ev.y_true == 1)).sum())
    fp = int(((pred == 1) & (ev.y_true == 0)).sum())
    fn = int(((pred == 0) & (ev.y_true == 1)).sum())
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return recall, f1


@dataclass(frozen=True)
class EvaluationReport:
    model: str
    ratio: float
    attack: str
    er: float
    drr: float
    reliability: float
    recall: float
    f1: float

    @classmethod
    def from_sets(cls, model: str, ratio: float, attack: str, malicious: EvaluationSet,
                  mixed: EvaluationSet | None = None) -> "EvaluationReport":
        """ER/DRR/reliability on the malicious set; recall/F1 on the mixed set when given."""
        recall, f1 = recall_f1(mixed if mixed is not None else malicious)
        return cls(model, ratio, attack, evasion_robustness(malicious), drr_overall(malicious),
                   model_reliability(malicious), recall, f1)

    @property
    def values(self) -> tuple[float, ...]:
        return (self.er, self.drr, self.reliability, self.recall, self.f1)


METRIC_FIELDS = ("er", "drr", "reliability", "recall", "f1")
METRICS_HEADER = tuple(f.name for f in fields(EvaluationReport))
METRIC_DIGITS = 6


def average_reports(reports: Sequence[EvaluationReport]) -> EvaluationReport:
    if not reports:
        raise EmptySetError("nothing to average")
    first = reports[0]
    means = {k: math.fsum(getattr(r, k) for r in reports) / len(reports) for k in METRIC_FIELDS}
    return EvaluationReport(first.model, first.ratio, first.attack, **means)


def _fmt(v) -> str:
    return format(v, f".{METRIC_DIGITS}f") if isinstance(v, float) else str(v)


def write_metrics_csv(path, reports: Iterable[EvaluationReport], extra: Sequence[str] = (),
                      extra_values: Sequence[Sequence] | None = None) -> None:
    """One row per report. ``extra`` columns (e.g. fold) are appended after the metric columns."""
    reports = list(reports)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*METRICS_HEADER, *extra])
        for i, r in enumerate(reports):
            row = [_fmt(v) for v in asdict(r).values()]
            if extra:
                row += [str(v) for v in extra_values[i]]
            writer.writerow(row)


def read_metrics_csv(path) -> list[EvaluationReport]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(EvaluationReport(row["model"], float(row["ratio"]), row["attack"],
                                        *(float(row[k]) for k in METRIC_FIELDS)))
    return out
