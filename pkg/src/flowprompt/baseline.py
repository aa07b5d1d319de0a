"""Tabular baseline: z-score + one-hot transform and class-weighted logistic regression."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import CATEGORICAL, FlowRecord
from .errors import DimensionMismatch, EmptyTrain, LengthMismatch, NonFiniteLoss, SingleClass

STD_FLOOR = 1e-12
MIN_STEP = 1e-12


@dataclass
class Standardizer:
    names: list[str]
    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def fit(cls, records: Sequence[FlowRecord]) -> "Standardizer":
        names = list(records[0].numeric_features())
        x = _numeric_matrix(records, names)
        stds = x.std(axis=0)
        stds[stds < STD_FLOOR] = 1.0
        return cls(names, x.mean(axis=0), stds)

    def transform(self, records: Sequence[FlowRecord]) -> np.ndarray:
        return (_numeric_matrix(records, self.names) - self.means) / self.stds


@dataclass
class OneHotEncoder:
    columns: tuple[str, ...] = CATEGORICAL
    categories: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def fit(cls, records: Sequence[FlowRecord], columns: tuple[str, ...] = CATEGORICAL) -> "OneHotEncoder":
        categories: dict[str, list[str]] = {}
        for col in columns:
            seen: dict[str, None] = {}
            for rec in records:
                seen.setdefault(getattr(rec, col))
            categories[col] = list(seen)
        return cls(columns, categories)

    @property
    def width(self) -> int:
        return sum(len(self.categories[c]) for c in self.columns)

    def transform(self, records: Sequence[FlowRecord]) -> np.ndarray:
        out = np.zeros((len(records), self.width))
        offset = 0
        for col in self.columns:
            lookup = {v: offset + j for j, v in enumerate(self.categories[col])}
            for i, rec in enumerate(records):
                j = lookup.get(getattr(rec, col))
                if j is not None:  # unknown -> all-zero block
                    out[i, j] = 1.0
            offset += len(lookup)
        return out


def _numeric_matrix(records: Sequence[FlowRecord], names: list[str]) -> np.ndarray:
    rows = []
    for rec in records:
        feats = rec.numeric_features()
        if list(feats) != names:
            missing = sorted(set(names) - set(feats))
            raise DimensionMismatch(f"record {rec.id}: numeric features differ from fit time (missing {missing})")
        rows.append(list(feats.values()))
    return np.asarray(rows, dtype=float).reshape(len(records), len(names))


def fit_transform(train: Sequence[FlowRecord]) -> tuple[Standardizer, OneHotEncoder, np.ndarray]:
    if not train:
        raise EmptyTrain("cannot fit the transformer on zero records")
    std = Standardizer.fit(train)
    ohe = OneHotEncoder.fit(train)
    return std, ohe, transform(std, ohe, train)


def transform(std: Standardizer, ohe: OneHotEncoder, records: Sequence[FlowRecord]) -> np.ndarray:
    return np.hstack([std.transform(records), ohe.transform(records)])


def save_preprocessor(path: str | Path, std: Standardizer, ohe: OneHotEncoder) -> None:
    doc = {
        "numeric": {"names": std.names, "means": std.means.tolist(), "stds": std.stds.tolist()},
        "categorical": {"columns": list(ohe.columns), "categories": ohe.categories},
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_preprocessor(path: str | Path) -> tuple[Standardizer, OneHotEncoder]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    num, cat = doc["numeric"], doc["categorical"]
    std = Standardizer(list(num["names"]), np.asarray(num["means"], dtype=float), np.asarray(num["stds"], dtype=float))
    return std, OneHotEncoder(tuple(cat["columns"]), {k: list(v) for k, v in cat["categories"].items()})


# -- logistic regression ------------------------------------------------------

@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    l2: float
    class_weights: dict[int, float]
    history: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "l2": self.l2,
            "class_weights": {str(k): v for k, v in self.class_weights.items()},
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LogRegModel":
        doc = json.loads(text)
        return cls(
            np.asarray(doc["weights"], dtype=float),
            float(doc["bias"]),
            float(doc["l2"]),
            {int(k): float(v) for k, v in doc["class_weights"].items()},
        )


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def balanced_class_weights(y: np.ndarray) -> dict[int, float]:
    n = y.size
    return {c: n / (2 * int((y == c).sum())) for c in (0, 1)}


def objective_and_gradient(
    w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float, class_weights: dict[int, float]
) -> tuple[float, np.ndarray, float]:
    """Weighted cross-entropy summed over rows plus ``l2 * ||w||^2``, and its gradient."""
    z = x @ w + b
    sw = np.where(y == 1, class_weights[1], class_weights[0])
    # -log p = log(1 + e^-z), -log(1-p) = log(1 + e^z)
    loss = np.where(y == 1, np.logaddexp(0.0, -z), np.logaddexp(0.0, z))
    obj = float(sw @ loss + l2 * (w @ w))
    resid = sw * (sigmoid(z) - y)
    return obj, x.T @ resid + 2.0 * l2 * w, float(resid.sum())


def train_logreg(
    x: np.ndarray,
    y: Sequence[int],
    l2: float = 1e-3,
    epochs: int = 100,
    step: float = 0.5,
    seed: int = 0,
    batch_size: int = 256,
) -> LogRegModel:
    """Mini-batch gradient descent with step halving.

    Updates use the batch-mean gradient (the summed objective scaled by
    1/n), which leaves the minimizer unchanged. After every epoch the full
    objective is re-evaluated; if it went up, the epoch is undone and the
    step halved, so the recorded history never increases. A step that
    shrinks below ``MIN_STEP`` ends training early.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        raise EmptyTrain("no training rows")
    if x.shape[0] != n:
        raise LengthMismatch(f"{x.shape[0]} rows vs {n} labels")
    if y.min() == y.max():
        raise SingleClass("training labels contain a single class")
    cw = balanced_class_weights(y.astype(int))
    sw = np.where(y == 1, cw[1], cw[0])

    w = np.zeros(x.shape[1])
    b = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        obj, _, _ = objective_and_gradient(w, b, x, y, l2, cw)
    if not np.isfinite(obj):
        raise NonFiniteLoss("initial objective is not finite (check inputs)")
    history = [obj]

    for epoch in range(epochs):
        perm = np.random.default_rng([seed, epoch]).permutation(n)
        while True:
            w_new, b_new = w.copy(), b
            with np.errstate(over="ignore", invalid="ignore"):
                for start in range(0, n, batch_size):
                    idx = perm[start:start + batch_size]
                    xb, yb, sb = x[idx], y[idx], sw[idx]
                    resid = sb * (sigmoid(xb @ w_new + b_new) - yb)
                    m = idx.size
                    w_new -= step * (xb.T @ resid / m + 2.0 * l2 * w_new / n)
                    b_new -= step * resid.sum() / m
                new_obj, _, _ = objective_and_gradient(w_new, b_new, x, y, l2, cw)
            if np.isfinite(new_obj) and new_obj <= obj:
                break
            step /= 2.0
            if step < MIN_STEP:
                if not np.isfinite(new_obj):
                    raise NonFiniteLoss("objective stays non-finite even at a vanishing step")
                # no descent left at float precision: converged
                return LogRegModel(w, b, l2, cw, history)
        w, b, obj = w_new, b_new, new_obj
        history.append(obj)

    return LogRegModel(w, b, l2, cw, history)


def predict_proba(model: LogRegModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.weights.size:
        raise DimensionMismatch(f"model expects {model.weights.size} features, got {x.shape[1]}")
    return sigmoid(x @ model.weights + model.bias)
