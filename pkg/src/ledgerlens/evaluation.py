"""Detector evaluation: confusion metrics over a temporal split, plus
end-to-end turn latency with deterministic backends."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from time import perf_counter
from typing import Sequence

import numpy as np

from .boosting import TreeEnsemble, predict_proba_batch
from .domain import DomainError, Label, Transaction
from .features import FeatureExtractor


class EmptyTestSet(DomainError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    threshold: float
    fingerprint: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_json(self) -> str:
        return json.dumps(
            {
                "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
                "accuracy": self.accuracy,
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "threshold": self.threshold,
                "fingerprint": self.fingerprint,
                "flags": list(self.flags),
            },
            indent=2,
        )

    def to_text(self) -> str:
        lines = [
            f"{'metric':<12}{'value':>10}",
            f"{'accuracy':<12}{self.accuracy:>10.4f}",
            f"{'precision':<12}{self.precision:>10.4f}",
            f"{'recall':<12}{self.recall:>10.4f}",
            f"{'f1':<12}{self.f1:>10.4f}",
            f"{'threshold':<12}{self.threshold:>10.2f}",
            f"confusion    tp={self.tp} fp={self.fp} fn={self.fn} tn={self.tn}",
        ]
        if self.flags:
            lines.append("flags        " + ", ".join(self.flags))
        return "\n".join(lines)


def metrics_from_confusion(tp: int, fp: int, fn: int, tn: int, threshold: float,
                           fingerprint: dict | None = None) -> MetricsReport:
    """Standard binary metrics; zero-denominator cases report 0 and are flagged."""
    total = tp + fp + fn + tn
    flags: list[str] = []
    accuracy = (tp + tn) / total if total else 0.0
    if total == 0:
        flags.append("empty")
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision, flags = 0.0, flags + ["precision_undefined"]
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall, flags = 0.0, flags + ["recall_undefined"]
    if precision + recall:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, flags = 0.0, flags + ["f1_undefined"]
    return MetricsReport(
        tp=tp, fp=fp, fn=fn, tn=tn,
        accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        threshold=threshold, fingerprint=fingerprint or {}, flags=tuple(flags),
    )


def score_transactions(
    model: TreeEnsemble, extractor: FeatureExtractor, transactions: Sequence[Transaction]
) -> np.ndarray:
    """Anomaly probabilities via the full feature + predict path."""
    X = np.array([extractor.vector_for(tx).values for tx in transactions], dtype=np.float64)
    return predict_proba_batch(model, X)


def evaluate(
    model: TreeEnsemble,
    extractor: FeatureExtractor,
    test: Sequence[Transaction],
    threshold: float = 0.5,
    fingerprint: dict | None = None,
) -> MetricsReport:
    """Confusion metrics on labeled test rows; anomalous is the positive class."""
    labeled = [tx for tx in test if tx.label is not Label.UNLABELED]
    if not labeled:
        raise EmptyTestSet("no labeled rows to evaluate")
    probabilities = score_transactions(model, extractor, labeled)
    predicted = probabilities >= threshold
    actual = np.array([tx.label is Label.ANOMALOUS for tx in labeled])
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    info = dict(fingerprint or {})
    info.setdefault("test_rows", len(labeled))
    return metrics_from_confusion(tp, fp, fn, tn, threshold, info)


def threshold_sweep(
    probabilities: Sequence[float], labels: Sequence[bool], thresholds: Sequence[float]
) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) per threshold, for sanity checks."""
    out = []
    for t in thresholds:
        tp = sum(1 for p, y in zip(probabilities, labels) if p >= t and y)
        fp = sum(1 for p, y in zip(probabilities, labels) if p >= t and not y)
        fn = sum(1 for p, y in zip(probabilities, labels) if p < t and y)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        out.append((t, precision, recall))
    return out


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    p95_ms: float
    samples_ms: tuple[float, ...]
    flags: tuple[str, ...] = ()

    def to_json(self) -> str:
        return json.dumps(
            {"mean_ms": self.mean_ms, "p95_ms": self.p95_ms,
             "turns": len(self.samples_ms), "flags": list(self.flags)}
        )


def measure_latency(orchestrator, queries: Sequence[str]) -> LatencyStats:
    """Wall-clock per-turn latency over a scripted, single-session run."""
    if not queries:
        return LatencyStats(0.0, 0.0, (), flags=("empty_script",))
    session = orchestrator.new_session()
    samples: list[float] = []
    for text in queries:
        t0 = perf_counter()
        orchestrator.handle_turn(session, text)
        samples.append((perf_counter() - t0) * 1000.0)
    ordered = sorted(samples)
    p95_index = max(0, math.ceil(0.95 * len(ordered)) - 1)
    return LatencyStats(
        mean_ms=sum(samples) / len(samples),
        p95_ms=ordered[p95_index],
        samples_ms=tuple(samples),
    )
