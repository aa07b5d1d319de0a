"""Derived numeric cues and the six boolean domain flags."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import FlowRecord
from .errors import EmptyTrain

EPS_DUR = 1e-6

FLAG_NAMES = (
    "asymmetry_high",
    "pkt_rate_high",
    "ttl_anomaly",
    "tcp_timer_anomaly",
    "rare_service_state",
    "short_burst",
)


@dataclass(frozen=True, slots=True)
class DerivedCues:
    pkt_rate: float
    byte_ratio: float
    pkt_ratio: float
    ttl_ratio: float
    dur: float
    tcprtt: float
    synack: float
    ackdat: float
    ct_state_ttl: int


@dataclass(frozen=True)
class FlagThresholds:
    """Cutoffs for the flag rules.

    The defaults are heuristics picked for UNSW-NB15 magnitudes; override
    them through ``thresholds.json``.
    """

    tau_br: float = 100.0
    tau_pr: float = 10.0
    tau_r: float = 1000.0
    ttl_low: float = 30.0
    ttl_high: float = 255.0
    timer_min: float = 1e-4
    timer_order_slack: float = 1e-3
    rarity_quantile: float = 0.05
    burst_dur_max: float = 0.1
    burst_pkts_min: float = 20.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"threshold {f.name} must be strictly positive")
        if not self.ttl_low < self.ttl_high:
            raise ValueError("ttl_low must be below ttl_high")
        if not 0 < self.rarity_quantile < 1:
            raise ValueError("rarity_quantile must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "FlagThresholds":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown threshold keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in doc.items()})

    @classmethod
    def load(cls, path: str | Path) -> "FlagThresholds":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


@dataclass(frozen=True)
class RarityTable:
    service_freq: dict[str, float]
    state_freq: dict[str, float]
    cutoff_freq: float

    def is_rare(self, service: str, state: str) -> bool:
        # unseen categories count as rare
        return (
            self.service_freq.get(service, 0.0) < self.cutoff_freq
            or self.state_freq.get(state, 0.0) < self.cutoff_freq
        )

    def to_json(self) -> str:
        return json.dumps(
            {"service_freq": self.service_freq, "state_freq": self.state_freq, "cutoff_freq": self.cutoff_freq},
            indent=2,
            sort_keys=True,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RarityTable":
        doc = json.loads(text)
        return cls(
            service_freq={k: float(v) for k, v in doc["service_freq"].items()},
            state_freq={k: float(v) for k, v in doc["state_freq"].items()},
            cutoff_freq=float(doc["cutoff_freq"]),
        )


@dataclass(frozen=True, slots=True)
class FlagSet:
    asymmetry_high: bool
    pkt_rate_high: bool
    ttl_anomaly: bool
    tcp_timer_anomaly: bool
    rare_service_state: bool
    short_burst: bool

    def items(self) -> list[tuple[str, bool]]:
        return [(name, getattr(self, name)) for name in FLAG_NAMES]

    @property
    def count(self) -> int:
        return sum(getattr(self, name) for name in FLAG_NAMES)


def compute_cues(record: FlowRecord) -> DerivedCues:
    return DerivedCues(
        pkt_rate=(record.spkts + record.dpkts) / max(EPS_DUR, record.dur),
        byte_ratio=(record.sbytes + 1) / (record.dbytes + 1),
        pkt_ratio=(record.spkts + 1) / (record.dpkts + 1),
        ttl_ratio=(record.sttl + 1) / (record.dttl + 1),
        dur=record.dur,
        tcprtt=record.tcprtt,
        synack=record.synack,
        ackdat=record.ackdat,
        ct_state_ttl=record.ct_state_ttl,
    )


def _relative(counts: Counter) -> dict[str, float]:
    total = sum(counts.values())
    return {k: counts[k] / total for k in sorted(counts)}


def fit_rarity_table(train: Sequence[FlowRecord], thresholds: FlagThresholds = FlagThresholds()) -> RarityTable:
    """Empirical service/state frequencies plus a rarity cutoff.

    The cutoff is the ``rarity_quantile`` quantile (linear interpolation) of
    the pooled per-category frequencies of both fields. Comparison against it
    is strict, so a single-category field is never rare.
    """
    if not train:
        raise EmptyTrain("cannot fit a rarity table on zero records")
    service_freq = _relative(Counter(r.service for r in train))
    state_freq = _relative(Counter(r.state for r in train))
    pooled = np.array(list(service_freq.values()) + list(state_freq.values()))
    cutoff = float(np.quantile(pooled, thresholds.rarity_quantile))
    return RarityTable(service_freq, state_freq, cutoff)


def compute_flags(
    cues: DerivedCues,
    record: FlowRecord,
    thresholds: FlagThresholds,
    rarity: RarityTable,
) -> FlagSet:
    t = thresholds

    def ttl_out(v: int) -> bool:
        return not t.ttl_low <= v <= t.ttl_high

    timers_positive = cues.tcprtt > 0 and cues.synack > 0 and cues.ackdat > 0
    return FlagSet(
        asymmetry_high=cues.byte_ratio > t.tau_br or cues.pkt_ratio > t.tau_pr,
        pkt_rate_high=cues.pkt_rate > t.tau_r,
        # dttl == 0 is normal for one-directional flows
        ttl_anomaly=ttl_out(record.sttl) or (record.dttl > 0 and ttl_out(record.dttl)),
        tcp_timer_anomaly=(0 < cues.tcprtt < t.timer_min)
        or (timers_positive and cues.synack + cues.ackdat > cues.tcprtt + t.timer_order_slack),
        rare_service_state=rarity.is_rare(record.service, record.state),
        short_burst=cues.dur <= t.burst_dur_max and (record.spkts + record.dpkts) >= t.burst_pkts_min,
    )


def flags_for(record: FlowRecord, thresholds: FlagThresholds, rarity: RarityTable) -> FlagSet:
    return compute_flags(compute_cues(record), record, thresholds, rarity)


def flag_table(records: Iterable[FlowRecord], thresholds: FlagThresholds, rarity: RarityTable) -> list[dict]:
    rows = []
    for rec in records:
        row = {"id": rec.id}
        row.update((k, int(v)) for k, v in flags_for(rec, thresholds, rarity).items())
        rows.append(row)
    return rows
