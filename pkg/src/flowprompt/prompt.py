"""Prompt assembly for the zero-shot, instruction-guided and few-shot regimes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .dataset import STREAM_EXEMPLAR, FlowRecord, rank_key
from .errors import ExemplarMismatch, InsufficientClass
from .grammar import format_verdict, parse_verdict
from .render import FlowRenderer, FlowText

VARIANTS = ("zero_shot", "instruction", "few_shot")
EXEMPLAR_CONFIDENCE = {1: 0.9, 0: 0.1}


@dataclass(frozen=True)
class PromptMode:
    variant: str = "instruction"
    k_per_class: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant == "few_shot" and self.k_per_class not in (1, 2):
            raise ValueError("few_shot needs k_per_class of 1 or 2")


@dataclass(frozen=True)
class Exemplar:
    flow_text: FlowText
    label: int
    verdict_json: str

    def __post_init__(self):
        parse_verdict(self.verdict_json)


@dataclass(frozen=True)
class PromptTemplate:
    role_preamble: str
    instruction_block: str
    answer_directive: str
    version: str = "custom"

    @classmethod
    def default(cls) -> "PromptTemplate":
        text = resources.files("flowprompt.assets").joinpath("template_v1.json").read_text(encoding="utf-8")
        return cls.from_json(text)

    @classmethod
    def from_json(cls, text: str) -> "PromptTemplate":
        doc = json.loads(text)
        return cls(doc["role_preamble"], doc["instruction_block"], doc["answer_directive"], doc.get("version", "custom"))

    @classmethod
    def load(cls, path: str | Path) -> "PromptTemplate":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def build_prompt(mode: PromptMode, flow: FlowText, template: PromptTemplate, exemplars: Sequence[Exemplar] = ()) -> str:
    """Assemble one prompt; the target flow is always the last flow shown.

    Few-shot prompts keep the instruction block and add the exemplars in
    ``### EXAMPLE`` sections ahead of the target ``### FLOW``.
    """
    if mode.variant != "few_shot":
        if exemplars:
            raise ExemplarMismatch(f"{mode.variant} prompts take no exemplars")
    else:
        labels = [ex.label for ex in exemplars]
        if len(labels) != 2 * mode.k_per_class or labels.count(1) != labels.count(0):
            raise ExemplarMismatch(
                f"few_shot with k_per_class={mode.k_per_class} needs {mode.k_per_class} exemplars per class, got labels {labels}"
            )

    parts = [template.role_preamble]
    if mode.variant in ("instruction", "few_shot"):
        parts.append(template.instruction_block)
    for ex in exemplars:
        parts.append(f"### EXAMPLE\n{ex.flow_text.text}\n### ANSWER\n{ex.verdict_json}")
    parts.append(f"### FLOW\n{flow.text}")
    parts.append(f"{template.answer_directive}\n### ANSWER\n")
    return "\n\n".join(parts)


def select_exemplars(dev: Sequence[FlowRecord], k_per_class: int, seed: int, renderer: FlowRenderer) -> list[Exemplar]:
    """Pick ``k_per_class`` attack and benign dev records, interleaved attack first."""
    by_label: dict[int, list[FlowRecord]] = {0: [], 1: []}
    for rec in dev:
        by_label[rec.label].append(rec)
    picked: dict[int, list[FlowRecord]] = {}
    for label, recs in by_label.items():
        if len(recs) < k_per_class:
            raise InsufficientClass(f"dev has {len(recs)} records of class {label}, need {k_per_class}")
        recs = sorted(recs, key=lambda r: (rank_key(seed, r.id, STREAM_EXEMPLAR), r.id))
        picked[label] = recs[:k_per_class]

    out = []
    for j in range(k_per_class):
        for label in (1, 0):
            rec = picked[label][j]
            text, _ = renderer.render(rec)
            verdict = format_verdict("attack" if label else "benign", EXEMPLAR_CONFIDENCE[label])
            out.append(Exemplar(text, label, verdict))
    return out
