"""Task metrics, generalization error and per-epoch curve logging."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, astuple
from pathlib import Path
from typing import Optional

import numpy as np

PSNR_CAP = 100.0
CSV_HEADER = ("stage", "patient", "epoch", "split", "loss", "metric", "metric_value", "seed")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


@dataclass(frozen=True)
class GenError:
    value: float
    stage: str = ""
    scope: str = "cohort"


def generalization_error(e_train: float, e_valid: float, stage: str = "", scope: str = "cohort") -> GenError:
    """Absolute gap between training and validation loss."""
    if not (math.isfinite(e_train) and math.isfinite(e_valid)):
        raise ValueError("generalization error needs finite losses")
    return GenError(abs(e_train - e_valid), stage, scope)


def dsc(a, b) -> float:
    """Dice overlap of two binary masks; 1.0 when both are empty."""
    a, b = _pair(a, b)
    for m in (a, b):
        if np.any((m != 0) & (m != 1)):
            raise ValueError("dsc expects binary masks")
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.sum(a * b) / total)


def psnr(prediction, reference) -> float:
    """PSNR in dB for unit data range, capped at ``PSNR_CAP``."""
    p, r = _pair(prediction, reference)
    mse = float(np.mean((p - r) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def mae(prediction, reference) -> float:
    p, r = _pair(prediction, reference)
    return float(np.mean(np.abs(p - r)))


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(prob) >= threshold).astype(np.float64)


# name, higher-is-better
TASK_METRIC = {"seg": ("dsc", True), "sr": ("psnr", True), "sct": ("mae", False)}


def task_metric(task: str, predictions, targets) -> float:
    """Mean per-image task metric over a batch of predictions."""
    name = TASK_METRIC[task][0]
    vals = []
    for p, t in zip(predictions, targets):
        if name == "dsc":
            vals.append(dsc(binarize(p), t))
        elif name == "psnr":
            vals.append(psnr(np.clip(p, 0.0, 1.0), t))
        else:
            vals.append(mae(p, t))
    return float(np.mean(vals))


@dataclass
class Record:
    stage: str
    patient: str
    epoch: int
    split: str
    loss: float
    metric: str = ""
    metric_value: Optional[float] = None
    seed: int = 0


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


@dataclass
class MetricsLog:
    records: list[Record] = field(default_factory=list)

    def add(self, stage, patient, epoch, split, loss, metric="", metric_value=None, seed=0):
        last = self.series(stage, split, patient)
        if last and epoch <= last[-1].epoch:
            raise ValueError(f"epochs must increase within ({stage}, {split}, {patient})")
        self.records.append(Record(stage, patient, int(epoch), split, float(loss), metric,
                                   None if metric_value is None else float(metric_value), int(seed)))

    def series(self, stage, split, patient="cohort") -> list[Record]:
        return [r for r in self.records if r.stage == stage and r.split == split and r.patient == patient]

    def losses(self, stage, split, patient="cohort") -> list[float]:
        return [r.loss for r in self.series(stage, split, patient)]

    def extend(self, other: "MetricsLog") -> None:
        for r in other.records:
            self.add(*astuple(r))

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow([_fmt(x) for x in astuple(r)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsLog":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise ValueError("not a curves CSV: bad header")
        log = cls()
        for st, pat, ep, split, lo, met, mv, seed in rows[1:]:
            log.records.append(Record(st, pat, int(ep), split, float(lo), met,
                                      float(mv) if mv else None, int(seed)))
        return log


def curve_export(log: MetricsLog, path) -> Path:
    """Write the log as CSV, 17 significant digits per float."""
    if not len(log):
        raise ValueError("cannot export an empty log")
    path = Path(path)
    path.write_text(log.to_csv())
    return path
