"""UNSW-NB15 CSV ingestion and deterministic subset selection."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import BadValue, DevTooLarge, EmptyFile, InsufficientClass, MissingColumn, OddN

# Column order of the official UNSW_NB15_{training,testing}-set.csv headers.
# attack_cat is present in the files but unused (binary task only).
UNSW_COLUMNS: tuple[str, ...] = (
    "id", "dur", "proto", "service", "state", "spkts", "dpkts", "sbytes", "dbytes",
    "rate", "sttl", "dttl", "sload", "dload", "sloss", "dloss", "sinpkt", "dinpkt",
    "sjit", "djit", "swin", "stcpb", "dtcpb", "dwin", "tcprtt", "synack", "ackdat",
    "smean", "dmean", "trans_depth", "response_body_len", "ct_srv_src", "ct_state_ttl",
    "ct_dst_ltm", "ct_src_dport_ltm", "ct_dst_sport_ltm", "ct_dst_src_ltm",
    "is_ftp_login", "ct_ftp_cmd", "ct_flw_http_mthd", "ct_src_ltm", "ct_srv_dst",
    "is_sm_ips_ports", "label",
)

CATEGORICAL = ("proto", "service", "state")
COUNT_FIELDS = ("spkts", "dpkts", "sbytes", "dbytes", "ct_state_ttl")
TTL_FIELDS = ("sttl", "dttl")
SECONDS_FIELDS = ("dur", "tcprtt", "synack", "ackdat")
CORE_NUMERIC = (
    "dur", "spkts", "dpkts", "sbytes", "dbytes", "sttl", "dttl",
    "tcprtt", "synack", "ackdat", "ct_state_ttl",
)
# Minimal schema: everything FlowRecord names explicitly.
CORE_COLUMNS = ("id",) + CORE_NUMERIC[:1] + CATEGORICAL + CORE_NUMERIC[1:] + ("label",)

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, slots=True)
class FlowRecord:
    id: int
    dur: float
    proto: str
    service: str
    state: str
    spkts: int
    dpkts: int
    sbytes: int
    dbytes: int
    sttl: int
    dttl: int
    tcprtt: float
    synack: float
    ackdat: float
    ct_state_ttl: int
    label: int
    extra_names: tuple[str, ...] = ()
    extra_values: tuple[float, ...] = ()

    @property
    def extra_numeric(self) -> dict[str, float]:
        return dict(zip(self.extra_names, self.extra_values))

    def numeric_features(self) -> dict[str, float]:
        """All numeric features, core fields first, then the extras in file order."""
        out = {name: float(getattr(self, name)) for name in CORE_NUMERIC}
        out.update(zip(self.extra_names, self.extra_values))
        return out


@dataclass(frozen=True)
class SubsetSelection:
    ids: tuple[int, ...]
    labels: tuple[int, ...]
    seed: int
    class_counts: Mapping[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def is_balanced(self) -> bool:
        return self.class_counts.get(0, 0) == self.class_counts.get(1, 0)


def mix64(x: int) -> int:
    """splitmix64 finalizer."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def rank_key(seed: int, record_id: int, stream: int = 0) -> int:
    """Seeded 64-bit rank for a row ID.

    ``stream`` separates independent draws (sampling, dev split, exemplars)
    that share a seed.
    """
    return mix64(mix64((seed ^ (stream * 0xD1B54A32D192ED03)) & _MASK64) ^ (record_id & _MASK64))


STREAM_SAMPLE = 0
STREAM_SPLIT = 1
STREAM_EXEMPLAR = 2


def load_schema_manifest(path: str | Path) -> tuple[list[str], dict[str, str]]:
    """Read ``{"columns": [...], "aliases": {header: canonical}}``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    columns = [c.lower() for c in doc.get("columns", UNSW_COLUMNS)]
    aliases = {k.strip().lower(): v.lower() for k, v in doc.get("aliases", {}).items()}
    return columns, aliases


def _parse_int(raw: str, column: str, row: int) -> int:
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        value = float(raw)
    except ValueError:
        raise BadValue(f"non-numeric {column}={raw!r}", row) from None
    if not value.is_integer():
        raise BadValue(f"{column}={raw!r} is not an integer", row)
    return int(value)


def _parse_float(raw: str, column: str, row: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise BadValue(f"non-numeric {column}={raw!r}", row) from None
    if not math.isfinite(value):
        raise BadValue(f"non-finite {column}={raw!r}", row)
    return value


def load_csv(
    path: str | Path,
    schema: Sequence[str] = UNSW_COLUMNS,
    aliases: Mapping[str, str] | None = None,
) -> list[FlowRecord]:
    """Parse a UNSW-NB15 style CSV into FlowRecords, preserving row order.

    Headers are matched case-insensitively; ``aliases`` maps alternate header
    names onto canonical ones. Columns outside ``schema`` are ignored. Any
    value violating a FlowRecord invariant raises :class:`BadValue` with the
    1-based data row number.
    """
    schema = [c.lower() for c in schema]
    missing_core = [c for c in CORE_COLUMNS if c not in schema]
    if missing_core:
        raise ValueError(f"schema lacks required columns {missing_core}")
    aliases = {k.strip().lower(): v.lower() for k, v in (aliases or {}).items()}
    extra_names = tuple(c for c in schema if c not in CORE_COLUMNS and c != "attack_cat")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: no header row") from None
        names = [aliases.get(h.strip().lower(), h.strip().lower()) for h in header]
        index = {}
        for i, name in enumerate(names):
            index.setdefault(name, i)
        absent = [c for c in schema if c not in index]
        if absent:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(absent)}")

        records = []
        seen: set[int] = set()
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) < len(header):
                raise BadValue(f"expected {len(header)} fields, got {len(row)}", row_no)
            records.append(_build_record(row, index, extra_names, row_no))
            if records[-1].id in seen:
                raise BadValue(f"duplicate id {records[-1].id}", row_no)
            seen.add(records[-1].id)

    if not records:
        raise EmptyFile(f"{path}: no data rows")
    return records


def _build_record(row: list[str], index: dict[str, int], extra_names: tuple[str, ...], row_no: int) -> FlowRecord:
    def cell(name: str) -> str:
        return row[index[name]].strip()

    values: dict[str, object] = {"id": _parse_int(cell("id"), "id", row_no)}
    for name in SECONDS_FIELDS:
        v = _parse_float(cell(name), name, row_no)
        if v < 0:
            raise BadValue(f"{name}={v} is negative", row_no)
        values[name] = v
    for name in COUNT_FIELDS:
        v = _parse_int(cell(name), name, row_no)
        if v < 0:
            raise BadValue(f"{name}={v} is negative", row_no)
        values[name] = v
    for name in TTL_FIELDS:
        v = _parse_int(cell(name), name, row_no)
        if not 0 <= v <= 255:
            raise BadValue(f"{name}={v} outside [0, 255]", row_no)
        values[name] = v
    for name in CATEGORICAL:
        values[name] = cell(name)
    label = cell("label")
    if label not in ("0", "1"):
        raise BadValue(f"label={label!r} not in {{0, 1}}", row_no)
    values["label"] = int(label)
    extras = tuple(_parse_float(cell(name), name, row_no) for name in extra_names)
    return FlowRecord(**values, extra_names=extra_names, extra_values=extras)


def write_csv(records: Iterable[FlowRecord], path: str | Path) -> None:
    """Inverse of :func:`load_csv` over the canonical columns of ``records``."""
    records = list(records)
    extra_names = records[0].extra_names if records else ()
    header = list(CORE_COLUMNS[:-1]) + list(extra_names) + ["label"]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for rec in records:
            row = [repr(v) if isinstance(v, float) else v for v in (getattr(rec, c) for c in CORE_COLUMNS[:-1])]
            row += [repr(v) for v in rec.extra_values]
            row.append(rec.label)
            writer.writerow(row)


def _by_class(records: Iterable[FlowRecord]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {0: [], 1: []}
    for rec in records:
        out[rec.label].append(rec.id)
    return out


def sample_balanced(records: Sequence[FlowRecord], n: int, seed: int) -> SubsetSelection:
    """Draw ``n/2`` benign and ``n/2`` attack IDs.

    Selection keys on row ID only, so the result does not depend on the
    order of ``records``.
    """
    if n <= 0 or n % 2:
        raise OddN(f"n must be an even positive integer, got {n}")
    half = n // 2
    chosen: list[tuple[int, int]] = []
    for label, ids in _by_class(records).items():
        if len(ids) < half:
            raise InsufficientClass(f"class {label} has {len(ids)} rows, need {half}")
        ranked = sorted(sorted(ids), key=lambda i: rank_key(seed, i, STREAM_SAMPLE))
        chosen.extend((i, label) for i in ranked[:half])
    chosen.sort()
    return SubsetSelection(
        ids=tuple(i for i, _ in chosen),
        labels=tuple(lab for _, lab in chosen),
        seed=seed,
        class_counts={0: half, 1: half},
    )


def _selection(pairs: list[tuple[int, int]], seed: int) -> SubsetSelection:
    pairs = sorted(pairs)
    counts = Counter(lab for _, lab in pairs)
    return SubsetSelection(
        ids=tuple(i for i, _ in pairs),
        labels=tuple(lab for _, lab in pairs),
        seed=seed,
        class_counts={0: counts.get(0, 0), 1: counts.get(1, 0)},
    )


def split_dev_test(subset: SubsetSelection, dev_size: int, seed: int) -> tuple[SubsetSelection, SubsetSelection]:
    """Partition ``subset`` into a stratified dev slice and the remaining test slice."""
    total = len(subset)
    if dev_size <= 0:
        raise ValueError(f"dev_size must be positive, got {dev_size}")
    if dev_size >= total:
        raise DevTooLarge(f"dev_size={dev_size} must be smaller than the subset ({total})")

    per_class: dict[int, list[int]] = {0: [], 1: []}
    for i, lab in zip(subset.ids, subset.labels):
        per_class[lab].append(i)
    # largest-remainder allocation; odd leftovers go to the attack class
    quotas = {lab: dev_size * len(ids) / total for lab, ids in per_class.items()}
    alloc = {lab: math.floor(q) for lab, q in quotas.items()}
    leftover = dev_size - sum(alloc.values())
    for lab in sorted(quotas, key=lambda k: (quotas[k] - alloc[k], k), reverse=True)[:leftover]:
        alloc[lab] += 1

    dev: list[tuple[int, int]] = []
    test: list[tuple[int, int]] = []
    for lab, ids in per_class.items():
        ranked = sorted(sorted(ids), key=lambda i: rank_key(seed, i, STREAM_SPLIT))
        dev.extend((i, lab) for i in ranked[: alloc[lab]])
        test.extend((i, lab) for i in ranked[alloc[lab]:])
    return _selection(dev, seed), _selection(test, seed)


def write_ids(path: str | Path, dev: SubsetSelection, test: SubsetSelection) -> None:
    lines = ["# dev", *map(str, sorted(dev.ids)), "# test", *map(str, sorted(test.ids))]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ids(path: str | Path) -> dict[str, list[int]]:
    sections: dict[str, list[int]] = {}
    current = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            current = line[1:].strip()
            sections[current] = []
        elif current is None:
            raise ValueError(f"{path}: ID before any section header")
        else:
            sections[current].append(int(line))
    return sections


def index_by_id(records: Iterable[FlowRecord]) -> dict[int, FlowRecord]:
    return {rec.id: rec for rec in records}
