import csv
import json

import pytest

from flowprompt.bundle import (
    BUNDLE_FILES,
    PredictionRow,
    RunConfig,
    cmd_calibrate,
    cmd_evaluate,
    cmd_report,
    cmd_run,
    load_reference_rows,
    reference_line,
    verify_manifest,
    write_predictions,
)
from flowprompt.cli import main
from flowprompt.dataset import read_ids
from flowprompt.errors import DevTooLarge, IncompleteBundle, PipelineError
from flowprompt.prompt import PromptMode


def run(flow_files, out, **kw):
    train, test = flow_files
    return cmd_run(RunConfig(train=train, test=test, out=out, bootstrap_b=500, **kw))


@pytest.fixture(scope="module")
def bundle(flow_files, tmp_path_factory):
    return run(flow_files, tmp_path_factory.mktemp("b") / "run", n=200)


def test_layout_and_manifest(bundle):
    root = bundle.root
    manifest = json.loads((root / "manifest.json").read_text())
    assert manifest["status"] == "COMPLETE"
    files = set(manifest["files"])
    assert set(BUNDLE_FILES) <= files
    prompts = {f for f in files if f.startswith("prompts/")}
    assert len(prompts) == 200
    assert verify_manifest(root) == []
    (root / "ids.txt").write_text((root / "ids.txt").read_text() + "\n")
    assert verify_manifest(root) == ["ids.txt"]
    (root / "ids.txt").write_text((root / "ids.txt").read_text()[:-1])


def test_slices_disjoint_and_predictions_cover_test(bundle):
    ids = read_ids(bundle.root / "ids.txt")
    assert len(ids["dev"]) == 30 and len(ids["test"]) == 170
    assert not set(ids["dev"]) & set(ids["test"])
    with open(bundle.root / "predictions.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["id"]) for r in rows] == ids["test"]
    assert all(r["error"] == "" for r in rows)
    doc = json.loads((bundle.root / "metrics.json").read_text())
    assert doc["n"] == 170 and set(doc["intervals"]) == {"accuracy", "recall_pos", "precision_pos", "f1_pos"}


def test_grammar_and_prompts_in_bundle(bundle):
    from flowprompt.grammar import GBNF_V1
    assert (bundle.root / "grammar.gbnf").read_text() == GBNF_V1
    prompt = (bundle.root / "prompts" / f"{bundle.test_ids[0]}.txt").read_text()
    assert prompt.count("### FLOW") == 1 and prompt.endswith("### ANSWER\n")


def test_rerun_is_byte_identical(bundle, flow_files, tmp_path):
    again = run(flow_files, tmp_path / "again", n=200)
    for name in ("predictions.csv", "calibration.json", "metrics.json", "curves.csv", "ids.txt"):
        assert (again.root / name).read_bytes() == (bundle.root / name).read_bytes(), name


def test_few_shot_exemplars_excluded(flow_files, tmp_path):
    b = run(flow_files, tmp_path / "fs", n=200, mode=PromptMode("few_shot", 2))
    assert len(b.exemplar_ids) == 4
    assert set(b.exemplar_ids) <= set(b.dev_ids)
    assert not set(b.exemplar_ids) & set(b.test_ids)
    for rid in b.exemplar_ids:
        assert not (b.root / "prompts" / f"{rid}.txt").exists()
    prompt = (b.root / "prompts" / f"{b.test_ids[0]}.txt").read_text()
    assert prompt.count("### EXAMPLE") == 4
    assert json.loads((b.root / "manifest.json").read_text())["exemplar_ids"] == list(b.exemplar_ids)


def test_dev_too_large_reports_split_stage(flow_files, tmp_path):
    with pytest.raises(PipelineError) as info:
        run(flow_files, tmp_path / "bad", n=20, dev_size=20)
    assert info.value.stage == "split" and isinstance(info.value.cause, DevTooLarge)
    manifest = json.loads((tmp_path / "bad" / "manifest.json").read_text())
    assert manifest["status"] == "INCOMPLETE" and manifest["failed_stage"] == "split"
    with pytest.raises(IncompleteBundle):
        cmd_report(tmp_path / "bad")


def published_rows():
    rows, rid = [], 1
    for label, pred, count, p in ((1, 1, 87, 0.9), (0, 1, 28, 0.6), (0, 0, 70, 0.1), (1, 0, 15, 0.2)):
        for _ in range(count):
            rows.append(PredictionRow(rid, label, p, pred))
            rid += 1
    return rows


def test_report_from_injected_predictions(tmp_path):
    write_predictions(tmp_path / "predictions.csv", published_rows())
    with pytest.raises(IncompleteBundle):
        cmd_report(tmp_path)
    doc = cmd_evaluate(tmp_path)
    assert doc["metrics"]["accuracy"] == 0.785 and doc["metrics"]["f1_pos"] == 0.8018
    assert json.loads((tmp_path / "confusion.json").read_text()) == {"tp": 87, "fp": 28, "tn": 70, "fn": 15}
    report = cmd_report(tmp_path)
    run_line = next(line for line in report.splitlines() if line.startswith("| run |"))
    assert "| 0.7850 |" in run_line and "| 0.8018 |" in run_line
    assert report == cmd_report(tmp_path)
    for ref in load_reference_rows():
        assert reference_line(ref) in report


def test_evaluate_matches_run(bundle):
    before = (bundle.root / "metrics.json").read_bytes()
    cmd_evaluate(bundle.root)
    assert (bundle.root / "metrics.json").read_bytes() == before
    manifest = json.loads((bundle.root / "manifest.json").read_text())
    assert manifest["status"] == "COMPLETE" and "tau_star" in manifest
    assert verify_manifest(bundle.root) == []


def test_calibrate_from_predictions(tmp_path):
    write_predictions(tmp_path / "p.csv", published_rows())
    result = cmd_calibrate(tmp_path / "p.csv")
    assert result.tau_star == 0.9 and result.candidate_count == 5


def test_cli_end_to_end(tmp_path, capsys):
    train, test = tmp_path / "train.csv", tmp_path / "test.csv"
    assert main(["synth", "--out", str(train), "--n", "600", "--seed", "1"]) == 0
    assert main(["synth", "--out", str(test), "--n", "600", "--seed", "2", "--start-id", "10001"]) == 0
    assert main(["ingest", "--test", str(test), "--out", str(tmp_path / "ing"), "--n", "100", "--dev-size", "20"]) == 0
    assert main(["flags", "--train", str(train), "--input", str(test), "--out", str(tmp_path / "fl" / "flags.csv")]) == 0
    assert main(["render", "--train", str(train), "--input", str(test), "--ids", str(tmp_path / "ing" / "ids.txt"),
                 "--out", str(tmp_path / "texts")]) == 0
    assert len(list((tmp_path / "texts").glob("*.txt"))) == 100
    out = tmp_path / "bundle"
    assert main(["run", "--mock", "--train", str(train), "--test", str(test), "--out", str(out), "--n", "100",
                 "--bootstrap-b", "200"]) == 0
    assert main(["evaluate", "--bundle", str(out)]) == 0
    assert main(["calibrate", "--predictions", str(out / "predictions.csv"), "--out", str(tmp_path / "cal.json")]) == 0
    capsys.readouterr()
    assert main(["report", "--bundle", str(out)]) == 0
    assert "| run |" in capsys.readouterr().out
    assert main(["baseline", "--train", str(train), "--test", str(test), "--out", str(tmp_path / "lr"),
                 "--ids", str(tmp_path / "ing" / "ids.txt"), "--epochs", "10"]) == 0
    assert json.loads((tmp_path / "lr" / "metrics.json").read_text())["n"] == 80
    assert main(["run", "--mock", "--train", str(train), "--test", str(test), "--out", str(tmp_path / "x"),
                 "--n", "10", "--dev-size", "10"]) == 2


def test_cli_reports_errors_cleanly(tmp_path, capsys):
    assert main(["ingest", "--test", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "w")]) == 2
    assert "error:" in capsys.readouterr().err
