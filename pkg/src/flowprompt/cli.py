"""Command-line entry point: ``flowprompt <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import baseline
from .bundle import RunConfig, cmd_calibrate, cmd_evaluate, cmd_report, cmd_run, evaluate_predictions, PredictionRow
from .dataset import UNSW_COLUMNS, index_by_id, load_csv, load_schema_manifest, read_ids, sample_balanced, split_dev_test, write_csv, write_ids
from .errors import FlowPromptError
from .flags import FLAG_NAMES, FlagThresholds, fit_rarity_table, flag_table
from .inference import ENV_API_KEY, ENV_ENDPOINT, BackendConfig, MockWeights
from .prompt import PromptMode
from .render import FlowRenderer
from .synthetic import synthetic_records

log = logging.getLogger("flowprompt")


def _load(path: Path, schema: Path | None):
    columns, aliases = (UNSW_COLUMNS, None) if schema is None else load_schema_manifest(schema)
    return load_csv(path, columns, aliases)


def _thresholds(path: Path | None) -> FlagThresholds:
    return FlagThresholds.load(path) if path else FlagThresholds()


def do_synth(args) -> int:
    records = synthetic_records(args.n, seed=args.seed, attack_fraction=args.attack_fraction, start_id=args.start_id)
    write_csv(records, args.out)
    print(f"wrote {len(records)} rows to {args.out}")
    return 0


def do_ingest(args) -> int:
    records = _load(args.test, args.schema)
    print(f"{args.test}: {len(records)} records")
    subset = sample_balanced(records, args.n, args.seed)
    dev, test = split_dev_test(subset, args.dev_size, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_ids(args.out / "ids.txt", dev, test)
    print(f"dev {len(dev)} {dict(dev.class_counts)}  test {len(test)} {dict(test.class_counts)} -> {args.out / 'ids.txt'}")
    return 0


def do_flags(args) -> int:
    thresholds = _thresholds(args.thresholds)
    rarity = fit_rarity_table(_load(args.train, args.schema), thresholds)
    records = _load(args.input, args.schema)
    rows = flag_table(records, thresholds, rarity)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=("id",) + FLAG_NAMES, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    args.out.with_name("rarity.json").write_text(rarity.to_json(), encoding="utf-8")
    print(f"wrote flags for {len(rows)} records to {args.out}")
    return 0


def do_render(args) -> int:
    thresholds = _thresholds(args.thresholds)
    renderer = FlowRenderer(thresholds, fit_rarity_table(_load(args.train, args.schema), thresholds))
    records = _load(args.input, args.schema)
    if args.ids:
        wanted = {i for ids in read_ids(args.ids).values() for i in ids}
        records = [r for r in records if r.id in wanted]
    if args.out is None:
        for rec in records:
            print(renderer.render(rec)[0].text)
        return 0
    args.out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        (args.out / f"{rec.id}.txt").write_text(renderer.render(rec)[0].text, encoding="utf-8")
    print(f"rendered {len(records)} flows into {args.out}")
    return 0


def _backend(args) -> BackendConfig:
    common = dict(n_ctx=args.n_ctx, n_batch=args.n_batch, timeout=args.timeout, max_retries=args.max_retries)
    if args.mock or args.backend == "mock":
        return BackendConfig(kind="mock", mock=MockWeights(args.mock_bias, args.mock_flag_weight), **common)
    return BackendConfig.remote_from_env(endpoint=args.endpoint, model_name=args.model, **common)


def do_run(args) -> int:
    mode = PromptMode(args.mode, args.k_per_class if args.mode == "few_shot" else 0)
    config = RunConfig(
        train=args.train,
        test=args.test,
        out=args.out,
        n=args.n,
        dev_size=args.dev_size,
        seed=args.seed,
        exemplar_seed=args.exemplar_seed,
        bootstrap_seed=args.bootstrap_seed,
        bootstrap_b=args.bootstrap_b,
        mode=mode,
        thresholds=args.thresholds,
        template=args.template,
        schema=args.schema,
        backend=_backend(args),
    )
    bundle = cmd_run(config)
    m = bundle.metrics["metrics"]
    print(f"tau*={bundle.tau_star:.4f}  accuracy={m['accuracy']:.4f}  F1={m['f1_pos']:.4f}  "
          f"macro-F1={m['macro_f1']:.4f}  -> {bundle.root}")
    return 0


def do_calibrate(args) -> int:
    result = cmd_calibrate(args.predictions)
    text = result.to_json()
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    print(f"tau*={result.tau_star:.4f}  dev F1={result.dev_f1:.4f}  candidates={result.candidate_count}")
    return 0


def do_evaluate(args) -> int:
    doc = cmd_evaluate(args.bundle)
    print(json.dumps(doc["metrics"], indent=2))
    return 0


def do_report(args) -> int:
    sys.stdout.write(cmd_report(args.bundle))
    return 0


def do_baseline(args) -> int:
    train = _load(args.train, args.schema)
    test = _load(args.test, args.schema)
    if args.ids:
        wanted = set(read_ids(args.ids).get("test", []))
        test = [r for r in test if r.id in wanted]
    std, ohe, x_train = baseline.fit_transform(train)
    y_train = np.array([r.label for r in train])
    model = baseline.train_logreg(x_train, y_train, l2=args.l2, epochs=args.epochs, step=args.step, seed=args.seed)
    proba = baseline.predict_proba(model, baseline.transform(std, ohe, test))
    rows = [PredictionRow(r.id, r.label, float(p), int(p >= 0.5)) for r, p in zip(test, proba)]
    doc, cm, _ = evaluate_predictions(rows, bootstrap_seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    baseline.save_preprocessor(args.out / "preprocessor.json", std, ohe)
    (args.out / "logreg.json").write_text(model.to_json(), encoding="utf-8")
    (args.out / "metrics.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    (args.out / "confusion.json").write_text(json.dumps(cm, indent=2) + "\n", encoding="utf-8")
    m = doc["metrics"]
    print(f"logistic regression: d={x_train.shape[1]}  accuracy={m['accuracy']:.4f}  F1={m['f1_pos']:.4f}  "
          f"macro-F1={m['macro_f1']:.4f}  -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowprompt", description="Prompt-only flow intrusion detection pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def schema_arg(p):
        p.add_argument("--schema", type=Path, help="JSON manifest with columns and header aliases")

    p = sub.add_parser("synth", help="write a synthetic UNSW-NB15-shaped CSV")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attack-fraction", type=float, default=0.5)
    p.add_argument("--start-id", type=int, default=1)
    p.set_defaults(func=do_synth)

    p = sub.add_parser("ingest", help="validate a CSV and write balanced dev/test ids.txt")
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--dev-size", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    schema_arg(p)
    p.set_defaults(func=do_ingest)

    p = sub.add_parser("flags", help="compute the six boolean flags per record")
    p.add_argument("--train", type=Path, required=True, help="file the rarity table is fitted on")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--thresholds", type=Path)
    schema_arg(p)
    p.set_defaults(func=do_flags)

    p = sub.add_parser("render", help="render flow texts")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--ids", type=Path, help="restrict to IDs listed in an ids.txt")
    p.add_argument("--out", type=Path, help="directory for <id>.txt files (default: stdout)")
    p.add_argument("--thresholds", type=Path)
    schema_arg(p)
    p.set_defaults(func=do_render)

    p = sub.add_parser("run", help="full pipeline, writes the reproducibility bundle")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--dev-size", type=int)
    p.add_argument("--mode", choices=("zero_shot", "instruction", "few_shot"), default="instruction")
    p.add_argument("--k-per-class", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exemplar-seed", type=int)
    p.add_argument("--bootstrap-seed", type=int)
    p.add_argument("--bootstrap-b", type=int, default=2000)
    p.add_argument("--thresholds", type=Path)
    p.add_argument("--template", type=Path)
    p.add_argument("--backend", choices=("remote", "mock"), default="remote")
    p.add_argument("--mock", action="store_true", help="shorthand for --backend mock")
    p.add_argument("--endpoint", help=f"completion URL (default ${ENV_ENDPOINT}; bearer token from ${ENV_API_KEY})")
    p.add_argument("--model", default="default")
    p.add_argument("--n-ctx", type=int, default=1024)
    p.add_argument("--n-batch", type=int, default=8, help="requests in flight")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--mock-bias", type=float, default=-3.0)
    p.add_argument("--mock-flag-weight", type=float, default=1.2)
    schema_arg(p)
    p.set_defaults(func=do_run)

    p = sub.add_parser("calibrate", help="pick tau* from a CSV with label and p_attack columns")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=do_calibrate)

    p = sub.add_parser("evaluate", help="recompute metrics from a bundle's predictions.csv")
    p.add_argument("--bundle", type=Path, required=True)
    p.set_defaults(func=do_evaluate)

    p = sub.add_parser("report", help="print the comparison table for a bundle")
    p.add_argument("--bundle", type=Path, required=True)
    p.set_defaults(func=do_report)

    p = sub.add_parser("baseline", help="train and score the logistic-regression baseline")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ids", type=Path, help="score only the test section of an ids.txt")
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    schema_arg(p)
    p.set_defaults(func=do_baseline)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream reader (e.g. head) closed early
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (FlowPromptError, OSError, ValueError) as exc:
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
