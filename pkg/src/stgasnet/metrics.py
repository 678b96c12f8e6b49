"""Binary occupancy metrics: confusion counts, precision and TN-discounted accuracy."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

TN_DIVISOR = 4.0


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def binarize_prediction(prob, threshold: float = 0.5) -> np.ndarray:
    """1 where ``prob >= threshold`` (boundary inclusive), else 0."""
    if not 0.0 < threshold < 1.0:
        raise MetricsError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def _as_binary(a, label: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise MetricsError(f"{label} must contain only 0/1 values")
    return arr.astype(bool)


def confusion(pred_bin, truth_bin) -> ConfusionCounts:
    p = _as_binary(pred_bin, "prediction")
    y = _as_binary(truth_bin, "truth")
    if p.shape != y.shape:
        raise MetricsError(f"shape mismatch {p.shape} vs {y.shape}")
    tp = int(np.count_nonzero(p & y))
    fp = int(np.count_nonzero(p & ~y))
    fn = int(np.count_nonzero(~p & y))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def precision(c: ConfusionCounts) -> float:
    # nothing predicted: perfect only if there was nothing to find
    if c.tp + c.fp == 0:
        return 1.0 if c.fn == 0 else 0.0
    return c.tp / (c.tp + c.fp)


def modified_accuracy(c: ConfusionCounts, tn_divisor: float = TN_DIVISOR) -> float:
    tn = c.tn / tn_divisor
    denom = c.tp + c.fp + c.fn + tn
    if denom == 0:
        return 1.0
    return (c.tp + tn) / denom


@dataclass
class MetricReport:
    """Per-timestep metrics averaged over sequences with equal weight."""

    timesteps: list[int]
    precision: list[float]
    accuracy: list[float]
    sequence_ids: list[str] = field(default_factory=list)
    per_sequence: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    counts: list[ConfusionCounts] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    threshold: float = 0.5
    tn_divisor: float = TN_DIVISOR

    @property
    def mean_precision(self) -> float:
        return float(np.mean(self.precision)) if self.precision else float("nan")

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracy)) if self.accuracy else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric"] + [f"t={t}" for t in self.timesteps])
        writer.writerow(["precision"] + [f"{v:.6f}" for v in self.precision])
        writer.writerow(["accuracy"] + [f"{v:.6f}" for v in self.accuracy])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "timesteps": self.timesteps,
            "precision": self.precision,
            "accuracy": self.accuracy,
            "mean_precision": self.mean_precision,
            "mean_accuracy": self.mean_accuracy,
            "sequence_ids": self.sequence_ids,
            "per_sequence": self.per_sequence,
            "counts": [c.__dict__ for c in self.counts],
            "skipped": self.skipped,
            "threshold": self.threshold,
            "tn_divisor": self.tn_divisor,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def report_from_frames(pred_probs: dict[str, np.ndarray], truths: dict[str, np.ndarray], first_t: int,
                       threshold: float = 0.5, tn_divisor: float = TN_DIVISOR,
                       skipped: list[str] | None = None) -> MetricReport:
    """Score ``[k, H, W]`` probability stacks against binary truth stacks, keyed by sequence id.

    Column ``j`` of the report is labelled ``first_t + j``.
    """
    ids = sorted(pred_probs)
    if not ids:
        raise MetricsError("no sequences to score")
    k = pred_probs[ids[0]].shape[0]
    per_seq: dict[str, dict[str, list[float]]] = {}
    totals = [ConfusionCounts(0, 0, 0, 0)] * k
    for sid in ids:
        probs, truth = pred_probs[sid], truths[sid]
        if probs.shape[0] != k or truth.shape[0] != k:
            raise MetricsError(f"sequence {sid}: expected {k} frames")
        precs, accs = [], []
        for j in range(k):
            c = confusion(binarize_prediction(probs[j], threshold), truth[j])
            totals[j] = totals[j] + c
            precs.append(precision(c))
            accs.append(modified_accuracy(c, tn_divisor))
        per_seq[sid] = {"precision": precs, "accuracy": accs}
    prec = [float(np.mean([per_seq[s]["precision"][j] for s in ids])) for j in range(k)]
    acc = [float(np.mean([per_seq[s]["accuracy"][j] for s in ids])) for j in range(k)]
    return MetricReport(timesteps=list(range(first_t, first_t + k)), precision=prec, accuracy=acc,
                        sequence_ids=ids, per_sequence=per_seq, counts=totals,
                        skipped=list(skipped or []), threshold=threshold, tn_divisor=tn_divisor)
