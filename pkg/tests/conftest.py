from __future__ import annotations

import pytest

from flowprompt.dataset import FlowRecord, write_csv
from flowprompt.synthetic import synthetic_records


def make_record(**overrides) -> FlowRecord:
    fields = dict(
        id=1, dur=0.0, proto="tcp", service="http", state="FIN", spkts=0, dpkts=0,
        sbytes=0, dbytes=0, sttl=0, dttl=0, tcprtt=0.0, synack=0.0, ackdat=0.0,
        ct_state_ttl=0, label=0,
    )
    fields.update(overrides)
    return FlowRecord(**fields)


@pytest.fixture(scope="session")
def flow_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("flows")
    train, test = root / "train.csv", root / "test.csv"
    write_csv(synthetic_records(1500, seed=11), train)
    write_csv(synthetic_records(1200, seed=12), test)
    return train, test


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
