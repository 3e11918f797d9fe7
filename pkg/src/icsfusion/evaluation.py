"""Confusion counts, precision/recall/F1 and report files.

Attack is the positive class. Any metric whose denominator is zero is
reported as 0. Accuracy is deliberately not part of the report.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import AlignedSet
from .model import ModelParams, predict

REPORT_FIELDS = ("tp", "tn", "fp", "fn", "precision", "recall", "f1", "fp_rate_pct", "fn_rate_pct")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(y_true, y_pred) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} labels vs {y_pred.size} predictions")
    if y_true.size == 0:
        raise ValueError("nothing to evaluate")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if np.any((arr != 0) & (arr != 1)):
            raise ValueError(f"{name} must be binary")
    return ConfusionMatrix(
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
        tn=int(np.sum((y_true == 0) & (y_pred == 0))),
        fp=int(np.sum((y_true == 0) & (y_pred == 1))),
        fn=int(np.sum((y_true == 1) & (y_pred == 0))),
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn)


def f1(cm: ConfusionMatrix) -> float:
    p, r = precision(cm), recall(cm)
    return _ratio(2.0 * p * r, p + r)


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    precision: float
    recall: float
    f1: float
    fp_rate_pct: float
    fn_rate_pct: float
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, meta: dict | None = None) -> "EvalReport":
        n = cm.total
        return cls(cm, precision(cm), recall(cm), f1(cm), 100.0 * _ratio(cm.fp, n), 100.0 * _ratio(cm.fn, n),
                   dict(meta or {}))

    def to_dict(self) -> dict:
        d = asdict(self.confusion)
        d.update(precision=self.precision, recall=self.recall, f1=self.f1,
                 fp_rate_pct=self.fp_rate_pct, fn_rate_pct=self.fn_rate_pct, meta=dict(self.meta))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        cm = ConfusionMatrix(int(d["tp"]), int(d["tn"]), int(d["fp"]), int(d["fn"]))
        return cls(cm, float(d["precision"]), float(d["recall"]), float(d["f1"]),
                   float(d["fp_rate_pct"]), float(d["fn_rate_pct"]), dict(d.get("meta", {})))

    def consistent(self, tol: float = 1e-12) -> bool:
        """Stored metrics agree with the ones recomputed from the counts."""
        ref = EvalReport.from_confusion(self.confusion)
        return all(abs(getattr(self, k) - getattr(ref, k)) <= tol
                   for k in ("precision", "recall", "f1", "fp_rate_pct", "fn_rate_pct"))


def evaluate(params: ModelParams, samples: AlignedSet, modality: str = "multi", meta: dict | None = None,
             created_at: str | None = None) -> EvalReport:
    if len(samples) == 0:
        raise ValueError("empty sample set")
    y_pred = predict(params, samples, modality)
    meta = {"checkpoint": None, "dataset": None, **(meta or {})}
    meta["created_at"] = created_at or _dt.datetime.now(_dt.timezone.utc).isoformat()
    return EvalReport.from_confusion(confusion(samples.y, y_pred), meta)


def emit_report(report: EvalReport, path, fmt: str = "json") -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            path.write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")
        elif fmt == "csv":
            d = report.to_dict()
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(REPORT_FIELDS)
                w.writerow([repr(d[k]) for k in REPORT_FIELDS])
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path) -> EvalReport:
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != 1:
            raise ValueError(f"{path}: expected exactly one data row, found {len(rows)}")
        return EvalReport.from_dict(rows[0])
    return EvalReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
