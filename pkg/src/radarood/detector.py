"""Multi-threshold ID/OOD decision and threshold calibration.

A sample is OOD only when every class decoder fails it: all reconstruction
errors must strictly exceed their class thresholds.  One error at or below its
threshold is enough to stay ID.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import MultiDecoderModel

VERDICT_ID = "ID"
VERDICT_OOD = "OOD"


@dataclass
class Thresholds:
    """Per-class error thresholds plus how they were calibrated."""

    per_class: dict[str, float]
    target_tpr: float | None = None
    calibration_size: int | None = None

    def __post_init__(self) -> None:
        for c, t in self.per_class.items():
            if not np.isfinite(t) or t < 0:
                raise ValueError(f"threshold for {c!r} must be finite and >= 0, got {t}")

    def to_dict(self) -> dict:
        return {
            "per_class": dict(self.per_class),
            "target_tpr": self.target_tpr,
            "calibration_size": self.calibration_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Thresholds":
        return cls(
            per_class={k: float(v) for k, v in d["per_class"].items()},
            target_tpr=d.get("target_tpr"),
            calibration_size=d.get("calibration_size"),
        )


def classify(errors: Mapping[str, float], thresholds: Thresholds) -> str:
    """OOD iff every class error strictly exceeds its threshold; ties stay ID."""
    t = thresholds.per_class
    if set(errors) != set(t):
        raise ValueError(f"error classes {sorted(errors)} do not match thresholds {sorted(t)}")
    if all(errors[c] > t[c] for c in t):
        return VERDICT_OOD
    return VERDICT_ID


def ood_score(errors: Mapping[str, float]) -> float:
    """Scalar OOD score: the minimum per-class error (higher = more OOD).

    Thresholding this score at t reproduces `classify` with uniform thresholds
    (t, t, t).  Table-style per-class evaluation instead scores each class with
    that class's own decoder error.
    """
    return min(errors.values())


def predicted_class(errors: Mapping[str, float], thresholds: Thresholds) -> str | None:
    """Among classes whose error passes its threshold, the one with least error.

    None when the sample is OOD.
    """
    t = thresholds.per_class
    passing = [c for c in t if errors[c] <= t[c]]
    if not passing:
        return None
    return min(passing, key=lambda c: errors[c])


def nearest_rank_quantile(values: np.ndarray, q: float) -> float:
    """ceil(q*n)-th order statistic; deterministic, no interpolation."""
    if len(values) == 0:
        raise ValueError("cannot take a quantile of an empty set")
    if not 0 < q <= 1:
        raise ValueError(f"quantile level must be in (0, 1], got {q}")
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    rank = int(np.ceil(q * len(ordered)))
    return float(ordered[rank - 1])


def calibrate(model: MultiDecoderModel, held_out: dict[str, np.ndarray],
              target_tpr: float = 0.95) -> Thresholds:
    """Pick per-class thresholds from held-out in-distribution data.

    For class c the threshold is the ``target_tpr`` nearest-rank quantile of the
    class-c reconstruction errors of held-out class-c samples, so at least that
    fraction of them satisfies error <= threshold.
    """
    if not 0 < target_tpr < 1:
        raise ValueError(f"target_tpr must be in (0, 1), got {target_tpr}")
    if set(held_out) != set(model.classes):
        raise ValueError(f"need held-out data for every class {model.classes}")
    per_class = {}
    total = 0
    for c in model.classes:
        samples = held_out[c]
        if len(samples) == 0:
            raise ValueError(f"empty calibration set for class {c!r}")
        errors = model.reconstruction_errors_batch(samples)[c]
        per_class[c] = nearest_rank_quantile(errors, target_tpr)
        total += len(samples)
    return Thresholds(per_class=per_class, target_tpr=target_tpr, calibration_size=total)


@dataclass
class SampleRecord:
    frame_index: int
    errors: dict[str, float]
    verdict: str
    predicted: str | None = None
    latency_ms: float | None = None


@dataclass
class DetectionReport:
    """Per-sample verdicts plus aggregate counts."""

    thresholds: Thresholds
    samples: list[SampleRecord] = field(default_factory=list)

    def add(self, record: SampleRecord) -> None:
        self.samples.append(record)

    @property
    def counts(self) -> dict[str, int]:
        out = {VERDICT_ID: 0, VERDICT_OOD: 0}
        for s in self.samples:
            out[s.verdict] += 1
        return out

    def latencies_ms(self) -> np.ndarray:
        return np.asarray([s.latency_ms for s in self.samples if s.latency_ms is not None])
