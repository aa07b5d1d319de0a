"""Operating-threshold selection on dev scores."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, NoPositives


@dataclass(frozen=True)
class CalibrationResult:
    tau_star: float
    dev_f1: float
    candidate_count: int
    sweep: tuple[tuple[float, float], ...]

    def to_json(self) -> str:
        doc = {
            "tau_star": self.tau_star,
            "dev_f1": self.dev_f1,
            "candidate_count": self.candidate_count,
            "sweep": [{"tau": t, "f1": f} for t, f in self.sweep],
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CalibrationResult":
        doc = json.loads(text)
        sweep = tuple((float(p["tau"]), float(p["f1"])) for p in doc["sweep"])
        return cls(float(doc["tau_star"]), float(doc["dev_f1"]), int(doc["candidate_count"]), sweep)


def calibrate_threshold(scores: Sequence[float], labels: Sequence[int]) -> CalibrationResult:
    """Pick the smallest threshold maximizing attack-class F1 on the dev slice.

    F1 only changes at observed scores, so the candidates are 0.0 plus every
    distinct score; the sweep is exact rather than a grid approximation.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape:
        raise LengthMismatch(f"{len(s)} scores vs {len(y)} labels")
    if s.size == 0:
        raise ValueError("calibration needs at least one score")
    positives = int(y.sum())
    if positives == 0:
        raise NoPositives("F1 is undefined without positive labels")

    candidates = np.unique(np.concatenate(([0.0], s)))
    order = np.argsort(s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    # predictions at tau are s >= tau: count everything from the insertion point up
    first = np.searchsorted(s_sorted, candidates, side="left")
    tp_suffix = np.concatenate((np.cumsum(y_sorted[::-1])[::-1], [0]))
    tp = tp_suffix[first]
    predicted = s.size - first
    f1 = 2.0 * tp / (predicted + positives)

    best = int(np.argmax(f1))  # first maximum = smallest tau
    sweep = tuple((float(t), float(v)) for t, v in zip(candidates, f1))
    return CalibrationResult(float(candidates[best]), float(f1[best]), len(candidates), sweep)


def apply_threshold(scores: Sequence[float], tau: float) -> list[int]:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau={tau} outside [0, 1]")
    return [1 if score >= tau else 0 for score in scores]
