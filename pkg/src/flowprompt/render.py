"""Flow-to-text rendering: flags, categorical context, then rounded cues on one line."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

from .dataset import FlowRecord
from .errors import BudgetExceeded
from .flags import DerivedCues, FlagSet, FlagThresholds, RarityTable, compute_cues, compute_flags

DEFAULT_DECIMALS = {
    "dur": 3,
    "pkt_rate": 1,
    "byte_ratio": 2,
    "pkt_ratio": 2,
    "ttl_ratio": 2,
    "tcprtt": 4,
    "synack": 4,
    "ackdat": 4,
    "ct_state_ttl": 0,
}
DEFAULT_FIELD_ORDER = (
    "dur", "pkt_rate", "byte_ratio", "pkt_ratio", "ttl_ratio",
    "tcprtt", "synack", "ackdat", "ct_state_ttl",
)
# a flow text must fit comfortably inside a 1024-token context (~3 chars/token)
DEFAULT_MAX_CHARS = 600


@dataclass(frozen=True)
class RenderPolicy:
    decimals: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_DECIMALS))
    field_order: tuple[str, ...] = DEFAULT_FIELD_ORDER
    flag_prefix_format: str = "FLAGS: {flags}"
    max_chars: int = DEFAULT_MAX_CHARS

    def __post_init__(self):
        missing = [name for name in self.field_order if name not in self.decimals]
        if missing:
            raise ValueError(f"no decimals entry for {missing}")
        if self.max_chars <= 0:
            raise ValueError("max_chars must be positive")


@dataclass(frozen=True)
class FlowText:
    text: str
    record_id: int

    @property
    def char_count(self) -> int:
        return len(self.text)


def round_half_even(value: float, decimals: int) -> str:
    """Fixed-point literal of ``value``'s shortest repr, rounded half-to-even."""
    q = Decimal(repr(float(value))).quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_HALF_EVEN)
    text = format(q, "f")
    return "0" if decimals == 0 and text == "-0" else text


def _categorical(value: str) -> str:
    # keep the key=value layout unambiguous
    if not value or any(ch.isspace() or ch in '="' for ch in value):
        return json.dumps(value)
    return value


def render_flow_text(record: FlowRecord, cues: DerivedCues, flags: FlagSet, policy: RenderPolicy = RenderPolicy()) -> FlowText:
    flag_part = policy.flag_prefix_format.format(
        flags=" ".join(f"{name}={'true' if on else 'false'}" for name, on in flags.items())
    )
    context = f"proto={_categorical(record.proto)} service={_categorical(record.service)} state={_categorical(record.state)}"
    cue_part = " ".join(
        f"{name}={round_half_even(getattr(cues, name), policy.decimals[name])}" for name in policy.field_order
    )
    text = " ".join(part for part in (flag_part, context, cue_part) if part)
    if len(text) > policy.max_chars:
        raise BudgetExceeded(f"flow {record.id}: {len(text)} chars exceeds budget {policy.max_chars}")
    return FlowText(text, record.id)


@dataclass(frozen=True)
class FlowRenderer:
    """Bundles the fitted flag configuration with a render policy."""

    thresholds: FlagThresholds
    rarity: RarityTable
    policy: RenderPolicy = RenderPolicy()

    def flags(self, record: FlowRecord) -> FlagSet:
        return compute_flags(compute_cues(record), record, self.thresholds, self.rarity)

    def render(self, record: FlowRecord) -> tuple[FlowText, FlagSet]:
        cues = compute_cues(record)
        flags = compute_flags(cues, record, self.thresholds, self.rarity)
        return render_flow_text(record, cues, flags, self.policy), flags
