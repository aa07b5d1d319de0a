"""End-to-end run orchestration and the reproducibility bundle.

Bundle layout (all paths relative to the output directory)::

    prompts/<id>.txt   full prompt sent for each dev and test ID
    grammar.gbnf       decoding constraint, byte-exact
    template.json      prompt template strings
    thresholds.json    flag cutoffs
    rarity.json        service/state frequency table fitted on the training file
    calibration.json   tau*, dev F1 and the full sweep
    predictions.csv    id,label,p_attack,prediction,latency_ms,error (test slice)
    metrics.json       scores and intervals recomputable from predictions.csv
    confusion.json     tp/fp/tn/fn
    curves.csv         threshold,fpr,tpr,precision,recall
    ids.txt            dev and test IDs
    config.json        effective configuration
    manifest.json      sha256 of every file above, plus run status
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .calibration import CalibrationResult, apply_threshold, calibrate_threshold
from .dataset import (
    UNSW_COLUMNS,
    index_by_id,
    load_csv,
    load_schema_manifest,
    sample_balanced,
    split_dev_test,
    write_ids,
)
from .errors import FlowPromptError, IncompleteBundle, PipelineError, SingleClass
from .flags import FlagThresholds, fit_rarity_table
from .grammar import format_probability
from .inference import BackendConfig, classify_batch
from .metrics import (
    bootstrap_f1_ci,
    classification_metrics,
    confusion,
    curve_table,
    roc_pr_points,
    round_half_even,
    wilson_ci,
)
from .prompt import PromptMode, PromptTemplate, build_prompt, select_exemplars
from .render import FlowRenderer, RenderPolicy

log = logging.getLogger(__name__)

PREDICTION_COLUMNS = ("id", "label", "p_attack", "prediction", "latency_ms", "error")
CURVE_COLUMNS = ("threshold", "fpr", "tpr", "precision", "recall")
BUNDLE_FILES = (
    "grammar.gbnf",
    "template.json",
    "thresholds.json",
    "rarity.json",
    "calibration.json",
    "predictions.csv",
    "metrics.json",
    "confusion.json",
    "curves.csv",
    "ids.txt",
    "config.json",
)


@dataclass
class RunConfig:
    train: Path
    test: Path
    out: Path
    n: int = 200
    dev_size: int | None = None
    seed: int = 0
    exemplar_seed: int | None = None
    bootstrap_seed: int | None = None
    bootstrap_b: int = 2000
    mode: PromptMode = field(default_factory=PromptMode)
    thresholds: Path | None = None
    template: Path | None = None
    schema: Path | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)

    def __post_init__(self):
        self.train, self.test, self.out = Path(self.train), Path(self.test), Path(self.out)
        if self.dev_size is None:
            # same dev share as a 300-of-2000 split, kept even
            self.dev_size = max(2, round(self.n * 0.15 / 2) * 2)
        if self.exemplar_seed is None:
            self.exemplar_seed = self.seed
        if self.bootstrap_seed is None:
            self.bootstrap_seed = self.seed

    def describe(self) -> dict:
        return {
            "train": str(self.train),
            "test": str(self.test),
            "out": str(self.out),
            "n": self.n,
            "dev_size": self.dev_size,
            "seeds": {"sample": self.seed, "exemplar": self.exemplar_seed, "bootstrap": self.bootstrap_seed},
            "bootstrap_b": self.bootstrap_b,
            "mode": {"variant": self.mode.variant, "k_per_class": self.mode.k_per_class},
            "thresholds": str(self.thresholds) if self.thresholds else None,
            "template": str(self.template) if self.template else None,
            "schema": str(self.schema) if self.schema else None,
            "backend": self.backend.describe(),
        }


@dataclass(frozen=True)
class EvalBundle:
    root: Path
    tau_star: float
    metrics: dict
    test_ids: tuple[int, ...]
    dev_ids: tuple[int, ...]
    exemplar_ids: tuple[int, ...]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def bundle_files(root: Path) -> list[str]:
    """Every file currently in the bundle except the manifest, sorted."""
    found = []
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            found.append(path.relative_to(root).as_posix())
    return found


def write_manifest(root: Path, status: str, **extra) -> dict:
    doc = {"status": status, **extra, "files": {rel: _sha256(root / rel) for rel in bundle_files(root)}}
    (root / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# -- predictions and metrics --------------------------------------------------

@dataclass(frozen=True)
class PredictionRow:
    id: int
    label: int
    p_attack: float | None
    prediction: int
    latency_ms: float = 0.0
    error: str = ""


def write_predictions(path: Path, rows: list[PredictionRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for r in rows:
            p = "" if r.p_attack is None else format_probability(r.p_attack)
            writer.writerow([r.id, r.label, p, r.prediction, f"{r.latency_ms:.3f}", r.error])


def read_predictions(path: Path) -> list[PredictionRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(PREDICTION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise IncompleteBundle(f"{path} lacks columns {sorted(missing)}")
        return [
            PredictionRow(
                id=int(row["id"]),
                label=int(row["label"]),
                p_attack=float(row["p_attack"]) if row["p_attack"] else None,
                prediction=int(row["prediction"]),
                latency_ms=float(row["latency_ms"] or 0.0),
                error=row["error"],
            )
            for row in reader
        ]


def evaluate_predictions(rows: list[PredictionRow], bootstrap_b: int = 2000, bootstrap_seed: int = 0):
    """Scores for one predictions table: ``(metrics_doc, confusion_doc, curve_rows)``."""
    labels = [r.label for r in rows]
    preds = [r.prediction for r in rows]
    cm = confusion(labels, preds)
    m = classification_metrics(cm)
    intervals = {
        "accuracy": wilson_ci(cm.tp + cm.tn, cm.total).rounded(),
        "recall_pos": wilson_ci(cm.tp, cm.tp + cm.fn).rounded() if cm.tp + cm.fn else None,
        "precision_pos": wilson_ci(cm.tp, cm.tp + cm.fp).rounded() if cm.tp + cm.fp else None,
        "f1_pos": bootstrap_f1_ci(labels, preds, bootstrap_b, bootstrap_seed).rounded(),
    }
    scored = [r for r in rows if r.p_attack is not None]
    curves, auc = [], None
    try:
        curves = curve_table([r.p_attack for r in scored], [r.label for r in scored])
        auc = round_half_even(roc_pr_points([r.p_attack for r in scored], [r.label for r in scored])[2])
    except SingleClass:
        pass
    doc = {
        "n": cm.total,
        "failures": sum(1 for r in rows if r.error),
        "metrics": m.rounded(),
        "intervals": intervals,
        "auc_roc": auc,
        "bootstrap": {"b": bootstrap_b, "seed": bootstrap_seed},
    }
    return doc, cm.as_dict(), curves


def write_evaluation(root: Path, rows: list[PredictionRow], bootstrap_b: int, bootstrap_seed: int) -> dict:
    doc, cm, curves = evaluate_predictions(rows, bootstrap_b, bootstrap_seed)
    _write_json(root / "metrics.json", doc)
    _write_json(root / "confusion.json", cm)
    with open(root / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for pt in curves:
            writer.writerow([repr(pt.threshold), repr(pt.fpr), repr(pt.tpr), repr(pt.precision), repr(pt.recall)])
    return doc


# -- run ----------------------------------------------------------------------

class _Stages:
    """Tracks the current stage; failures mark the bundle INCOMPLETE."""

    def __init__(self, root: Path):
        self.root = root

    @contextlib.contextmanager
    def __call__(self, name: str):
        log.info("stage %s", name)
        try:
            yield
        except FlowPromptError as exc:
            self._fail(name, exc)
            raise PipelineError(name, exc) from exc
        except (OSError, ValueError, KeyError) as exc:
            self._fail(name, exc)
            raise PipelineError(name, exc) from exc

    def _fail(self, name: str, exc: BaseException) -> None:
        try:
            write_manifest(self.root, "INCOMPLETE", failed_stage=name, error=f"{type(exc).__name__}: {exc}")
        except OSError:
            log.exception("could not write the INCOMPLETE manifest")


def cmd_run(config: RunConfig) -> EvalBundle:
    """Run the whole pipeline and write the bundle into ``config.out``."""
    root = config.out
    root.mkdir(parents=True, exist_ok=True)
    prompts_dir = root / "prompts"
    prompts_dir.mkdir(exist_ok=True)
    for stale in prompts_dir.glob("*.txt"):
        stale.unlink()
    (root / "manifest.json").unlink(missing_ok=True)
    _write_json(root / "config.json", config.describe())
    stage = _Stages(root)

    with stage("ingest"):
        columns, aliases = (UNSW_COLUMNS, None) if config.schema is None else load_schema_manifest(config.schema)
        train_records = load_csv(config.train, columns, aliases)
        test_records = load_csv(config.test, columns, aliases)
        log.info("loaded %d training and %d test rows", len(train_records), len(test_records))

    with stage("rarity"):
        thresholds = FlagThresholds.load(config.thresholds) if config.thresholds else FlagThresholds()
        rarity = fit_rarity_table(train_records, thresholds)
        (root / "thresholds.json").write_text(thresholds.to_json(), encoding="utf-8")
        (root / "rarity.json").write_text(rarity.to_json(), encoding="utf-8")

    with stage("sample"):
        subset = sample_balanced(test_records, config.n, config.seed)

    with stage("split"):
        dev, test = split_dev_test(subset, config.dev_size, config.seed)
        write_ids(root / "ids.txt", dev, test)

    with stage("render"):
        by_id = index_by_id(test_records)
        renderer = FlowRenderer(thresholds, rarity, RenderPolicy())
        rendered = {rid: renderer.render(by_id[rid]) for rid in dev.ids + test.ids}

    with stage("prompt"):
        template = PromptTemplate.load(config.template) if config.template else PromptTemplate.default()
        exemplars = []
        if config.mode.variant == "few_shot":
            exemplars = select_exemplars([by_id[i] for i in dev.ids], config.mode.k_per_class, config.exemplar_seed, renderer)
        exemplar_ids = tuple(ex.flow_text.record_id for ex in exemplars)
        leaked = set(exemplar_ids) & set(test.ids)
        if leaked:
            raise ValueError(f"exemplar IDs {sorted(leaked)} appear in the test slice")
        prompts = {}
        for rid in dev.ids + test.ids:
            if rid in exemplar_ids:
                continue  # its answer is already in every prompt
            prompts[rid] = build_prompt(config.mode, rendered[rid][0], template, exemplars)
            (prompts_dir / f"{rid}.txt").write_text(prompts[rid], encoding="utf-8")
        (root / "template.json").write_text(template.to_json(), encoding="utf-8")
        (root / "grammar.gbnf").write_text(config.backend.grammar.gbnf_text, encoding="utf-8")

    with stage("inference"):
        items = [(rid, prompts[rid], rendered[rid][1]) for rid in dev.ids + test.ids if rid in prompts]
        started = time.perf_counter()
        outcomes = {o.record_id: o for o in classify_batch(config.backend, items)}
        wall = time.perf_counter() - started
        log.info("inference: %d items in %.2fs (%.1f items/s), %d failures", len(items), wall,
                 len(items) / wall if wall else float("inf"), sum(not o.ok for o in outcomes.values()))

    with stage("calibrate"):
        dev_pairs = [(outcomes[i].verdict.p_attack, lab) for i, lab in zip(dev.ids, dev.labels)
                     if i in outcomes and outcomes[i].ok]
        if not dev_pairs:
            raise ValueError("no dev item produced a verdict")
        calib = calibrate_threshold([p for p, _ in dev_pairs], [lab for _, lab in dev_pairs])
        (root / "calibration.json").write_text(calib.to_json(), encoding="utf-8")

    with stage("apply"):
        rows = []
        for rid, label in zip(test.ids, test.labels):
            o = outcomes[rid]
            if o.ok:
                pred = apply_threshold([o.verdict.p_attack], calib.tau_star)[0]
                rows.append(PredictionRow(rid, label, o.verdict.p_attack, pred, o.latency_ms))
            else:
                # no verdict means no alert was raised
                rows.append(PredictionRow(rid, label, None, 0, o.latency_ms, o.error or "failed"))
        write_predictions(root / "predictions.csv", rows)

    with stage("metrics"):
        metrics_doc = write_evaluation(root, rows, config.bootstrap_b, config.bootstrap_seed)

    with stage("bundle"):
        expected = set(BUNDLE_FILES) | {f"prompts/{rid}.txt" for rid in prompts}
        present = set(bundle_files(root))
        if present != expected:
            raise ValueError(f"bundle layout mismatch: extra {sorted(present - expected)}, missing {sorted(expected - present)}")
        write_manifest(root, "COMPLETE", exemplar_ids=list(exemplar_ids), tau_star=calib.tau_star)

    return EvalBundle(root, calib.tau_star, metrics_doc, test.ids, dev.ids, exemplar_ids)


def verify_manifest(root: Path) -> list[str]:
    """Files whose hash no longer matches, plus files missing from or absent in the manifest."""
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    listed = manifest["files"]
    problems = [rel for rel, digest in listed.items() if not (root / rel).is_file() or _sha256(root / rel) != digest]
    problems += [rel for rel in bundle_files(root) if rel not in listed]
    return sorted(problems)


# -- evaluate / calibrate / report ---------------------------------------------

def _bundle_bootstrap(root: Path) -> tuple[int, int]:
    cfg = root / "config.json"
    if cfg.is_file():
        doc = json.loads(cfg.read_text(encoding="utf-8"))
        return int(doc.get("bootstrap_b", 2000)), int(doc.get("seeds", {}).get("bootstrap", 0))
    return 2000, 0


def cmd_evaluate(root: Path) -> dict:
    """Recompute metrics.json, confusion.json and curves.csv from predictions.csv."""
    root = Path(root)
    path = root / "predictions.csv"
    if not path.is_file():
        raise IncompleteBundle(f"{path} not found")
    b, seed = _bundle_bootstrap(root)
    doc = write_evaluation(root, read_predictions(path), b, seed)
    if (root / "manifest.json").is_file():
        previous = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        previous.pop("files", None)
        write_manifest(root, previous.pop("status", "COMPLETE"), **previous)
    return doc


def cmd_calibrate(predictions: Path) -> CalibrationResult:
    """Calibrate on a CSV holding at least ``label`` and ``p_attack`` columns."""
    rows = read_predictions(predictions)
    scored = [r for r in rows if r.p_attack is not None]
    return calibrate_threshold([r.p_attack for r in scored], [r.label for r in scored])


def load_reference_rows() -> list[dict[str, str]]:
    text = resources.files("flowprompt.assets").joinpath("reference_results.csv").read_text(encoding="utf-8")
    return list(csv.DictReader(io.StringIO(text)))


REPORT_COLUMNS = ("source", "model / run", "type", "accuracy", "precision (+)", "recall (+)", "F1 (+)", "macro-F1")
_METRIC_KEYS = ("accuracy", "precision_pos", "recall_pos", "f1_pos", "macro_f1")


def _table_line(cells) -> str:
    return "| " + " | ".join(cells) + " |"


def cmd_report(root: Path) -> str:
    """Markdown table: this run's scores followed by the published reference rows."""
    root = Path(root)
    manifest = root / "manifest.json"
    if manifest.is_file() and json.loads(manifest.read_text(encoding="utf-8")).get("status") != "COMPLETE":
        raise IncompleteBundle(f"{root} is marked INCOMPLETE")
    metrics_path = root / "metrics.json"
    if not metrics_path.is_file():
        raise IncompleteBundle(f"{metrics_path} not found")
    doc = json.loads(metrics_path.read_text(encoding="utf-8"))

    run_type = "this run"
    cfg = root / "config.json"
    if cfg.is_file():
        c = json.loads(cfg.read_text(encoding="utf-8"))
        run_type = f"{c['backend']['kind']} ({c['mode']['variant']})"
    lines = [f"bundle: {root.name}  n={doc['n']}  failures={doc['failures']}"]
    calib = root / "calibration.json"
    if calib.is_file():
        cal = CalibrationResult.from_json(calib.read_text(encoding="utf-8"))
        lines.append(f"tau*={cal.tau_star:.4f}  dev F1={cal.dev_f1:.4f}  candidates={cal.candidate_count}")
    f1_ci = doc["intervals"]["f1_pos"]
    acc_ci = doc["intervals"]["accuracy"]
    lines.append(f"accuracy 95% Wilson [{acc_ci['lo']:.4f}, {acc_ci['hi']:.4f}]  "
                 f"F1 95% bootstrap [{f1_ci['lo']:.4f}, {f1_ci['hi']:.4f}]")
    lines.append("")
    lines.append(_table_line(REPORT_COLUMNS))
    lines.append(_table_line(["---"] * len(REPORT_COLUMNS)))
    lines.append(_table_line(["run", root.name, run_type] + [f"{doc['metrics'][k]:.4f}" for k in _METRIC_KEYS]))
    for ref in load_reference_rows():
        lines.append(reference_line(ref))
    return "\n".join(lines) + "\n"


def reference_line(ref: dict[str, str]) -> str:
    return _table_line([ref["table"], ref["model"], ref["type"]] + [ref[k] for k in _METRIC_KEYS])
