"""Confusion counts, per-class and macro scores, intervals and curve points.

Attack (label 1) is the positive class. Any score whose denominator is zero
is defined as 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Sequence

import numpy as np

from .errors import BadCounts, Empty, LengthMismatch, SingleClass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise BadCounts("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> "ConfusionMatrix":
        """Same counts with the class roles exchanged."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision_pos: float
    recall_pos: float
    f1_pos: float
    precision_neg: float
    recall_neg: float
    f1_neg: float
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def rounded(self, places: int = 4) -> dict[str, float]:
        return {k: round_half_even(v, places) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lo: float
    hi: float
    method: str

    def rounded(self, places: int = 4) -> dict:
        return {
            "point": round_half_even(self.point, places),
            "lo": round_half_even(self.lo, places),
            "hi": round_half_even(self.hi, places),
            "method": self.method,
        }


def round_half_even(value: float, places: int = 4) -> float:
    return float(Decimal(repr(float(value))).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_EVEN))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(tp: int, fp: int, fn: int) -> float:
    # harmonic mean of precision and recall, written over counts
    return _ratio(2 * tp, 2 * tp + fp + fn)


def confusion(labels: Sequence[int], preds: Sequence[int]) -> ConfusionMatrix:
    if len(labels) != len(preds):
        raise LengthMismatch(f"{len(labels)} labels vs {len(preds)} predictions")
    if not labels:
        raise Empty("no items to score")
    tp = fp = tn = fn = 0
    for y, p in zip(labels, preds):
        if y not in (0, 1) or p not in (0, 1):
            raise ValueError("labels and predictions must be 0 or 1")
        if y and p:
            tp += 1
        elif p:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, tn, fn)


def classification_metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise Empty("confusion matrix is empty")
    p_pos, r_pos = _ratio(cm.tp, cm.tp + cm.fp), _ratio(cm.tp, cm.tp + cm.fn)
    p_neg, r_neg = _ratio(cm.tn, cm.tn + cm.fn), _ratio(cm.tn, cm.tn + cm.fp)
    f_pos, f_neg = _f1(cm.tp, cm.fp, cm.fn), _f1(cm.tn, cm.fn, cm.fp)
    return Metrics(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision_pos=p_pos,
        recall_pos=r_pos,
        f1_pos=f_pos,
        precision_neg=p_neg,
        recall_neg=r_neg,
        f1_neg=f_neg,
        macro_precision=(p_pos + p_neg) / 2,
        macro_recall=(r_pos + r_neg) / 2,
        macro_f1=(f_pos + f_neg) / 2,
    )


def wilson_ci(successes: int, n: int, z: float = 1.96) -> IntervalEstimate:
    """Wilson score interval for a binomial proportion."""
    if n <= 0 or not 0 <= successes <= n:
        raise BadCounts(f"need 0 <= successes <= n and n > 0, got {successes}/{n}")
    p = successes / n
    z2 = z * z
    denom = 1 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == n else min(1.0, center + half)
    return IntervalEstimate(p, min(lo, p), max(hi, p), "wilson")


def f1_score(labels: Sequence[int], preds: Sequence[int]) -> float:
    cm = confusion(labels, preds)
    return _f1(cm.tp, cm.fp, cm.fn)


def bootstrap_f1_ci(labels: Sequence[int], preds: Sequence[int], b: int = 2000, seed: int = 0) -> IntervalEstimate:
    """Paired nonparametric bootstrap, 2.5/97.5 percentile interval for attack-class F1."""
    y = np.asarray(labels, dtype=np.int64)
    p = np.asarray(preds, dtype=np.int64)
    if y.shape != p.shape:
        raise LengthMismatch(f"{len(y)} labels vs {len(p)} predictions")
    if y.size == 0:
        raise Empty("no items to resample")
    if b < 100:
        raise ValueError("use at least 100 resamples")
    point = f1_score(list(y), list(p))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, y.size, size=(b, y.size))
    ys, ps = y[idx], p[idx]
    tp = (ys & ps).sum(axis=1)
    denom = ys.sum(axis=1) + ps.sum(axis=1)
    stats = np.divide(2.0 * tp, denom, out=np.zeros(b), where=denom > 0)
    lo, hi = np.percentile(stats, [2.5, 97.5])
    # a skewed resample distribution can leave the point just outside
    return IntervalEstimate(point, min(float(lo), point), max(float(hi), point), "bootstrap")


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    fpr: float
    tpr: float
    precision: float
    recall: float


def curve_table(scores: Sequence[float], labels: Sequence[int]) -> list[CurvePoint]:
    """One operating point per distinct score, thresholds descending (predict score >= t)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape:
        raise LengthMismatch(f"{len(s)} scores vs {len(y)} labels")
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise SingleClass("curves need both classes")
    order = np.argsort(-s, kind="stable")
    s_desc, y_desc = s[order], y[order]
    tp_cum = np.cumsum(y_desc)
    fp_cum = np.cumsum(1 - y_desc)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s_desc[1:] != s_desc[:-1], True])
    rows = []
    for e in ends:
        tp, fp = int(tp_cum[e]), int(fp_cum[e])
        rows.append(CurvePoint(float(s_desc[e]), fp / neg, tp / pos, _ratio(tp, tp + fp), tp / pos))
    return rows


def roc_pr_points(scores: Sequence[float], labels: Sequence[int]):
    """Return ``(roc, pr, auc_roc)``.

    ``roc`` is a list of ``(fpr, tpr)`` from (0, 0) to (1, 1); ``pr`` is a list
    of ``(recall, precision)`` by increasing recall. AUC is the trapezoid
    area under ``roc``.
    """
    table = curve_table(scores, labels)
    roc = [(0.0, 0.0)] + [(pt.fpr, pt.tpr) for pt in table]
    pr = [(pt.recall, pt.precision) for pt in table]
    auc = sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(roc, roc[1:]))
    return roc, pr, auc
