"""Command-line front end.

    deem gen-data --config cfg.yaml --out data/
    deem run --config cfg.yaml --data data/ --out runs/a
    deem ablate-split|ablate-progressive|ablate-experts --config cfg.yaml --out runs/b
    deem infer --model runs/a/model --data data/ --out preds/
    deem report --out runs/a
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from functools import partial
from pathlib import Path

import numpy as np

from . import ablation
from .config import ExperimentConfig, load_config
from .dataset import (
    generate_synthetic,
    load_dataset,
    partition_by_date,
    save_dataset,
)
from .errors import ConfigError, DataError, DeemError, MaxRoundsExceeded, UnknownDate
from .progressive import labels_accuracy, run_to_completion
from .report import read_report, render_report, write_report
from .router import build_final_model, evaluate, load_model, save_model

log = logging.getLogger("deem")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_UNKNOWN_DATE = 4
EXIT_MAX_ROUNDS = 5

PREDICTIONS_FILE = "predictions.jsonl"
PSEUDO_LABELS_FILE = "pseudo_labels.jsonl"


def _jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def _experiment(args) -> ExperimentConfig:
    exp = load_config(args.config)
    if args.seed is not None:
        exp = exp.reseeded(args.seed)
    return exp


def _base_report(command: str, exp: ExperimentConfig) -> dict:
    return {
        "command": command,
        "seed": exp.seed,
        "config": exp.to_dict(),
        "config_digest": exp.digest(),
    }


def _finish(report: dict, out, started: float) -> None:
    write_report(report, out)
    # Wall-clock time lives outside the report so reports stay reproducible.
    (Path(out) / "timing.json").write_text(
        json.dumps({"seconds": round(time.perf_counter() - started, 3)}) + "\n", encoding="utf-8"
    )
    print(render_report(report), end="")


# -- gen-data ------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    exp = load_config(args.config)
    cfg = exp.data if args.seed is None else replace(exp.data, seed=args.seed)
    dataset, truth = generate_synthetic(cfg)
    save_dataset(dataset, args.out, truth)
    groups = partition_by_date(dataset)
    print(f"wrote {len(dataset.train)} train / {len(dataset.test)} test samples, "
          f"{cfg.num_classes} classes, dim {cfg.dim} to {args.out}")
    for g in groups:
        print(f"  {g.date}: {len(g.train)} train, {len(g.test)} test")
    if cfg.shift_scale == 0:
        print("  shift_scale=0: all date groups are identically distributed")
    return EXIT_OK


# -- run -------------------------------------------------------------------------


def _run_group(group, exp: ExperimentConfig, num_classes: int):
    rounds = []

    def audit(round_index, batch, fallback):
        records = [dict(r) for r in batch.audit]
        if fallback is not None:
            for r in records:
                if r["sample_id"] == fallback[0]:
                    r["case"] = "fallback"
                    r["label"] = fallback[1]
        rounds.append(records)

    result = run_to_completion(group, exp.pipeline, num_classes, audit)
    return result, rounds


def run_pipeline(dataset, truth, exp: ExperimentConfig, out, jobs: int = 1) -> dict:
    out = Path(out)
    groups = partition_by_date(dataset)
    for g in groups:
        if not g.train:
            raise DataError(f"group {g.date!r} has test samples but no training samples")
    results = ablation.parallel_map(
        partial(_run_group, exp=exp, num_classes=dataset.num_classes), groups, jobs
    )
    for g, (_, rounds) in zip(groups, results):
        for i, records in enumerate(rounds):
            _jsonl(out / "audit" / g.date / f"round_{i:03d}.jsonl", records)

    meta = {
        "config_digest": exp.digest(),
        "rounds": {g.date: len(r.history) for g, (r, _) in zip(groups, results)},
    }
    model = build_final_model(
        [(g, r.train) for g, (r, _) in zip(groups, results)], exp.pipeline, dataset.class_names, meta
    )
    save_model(model, out / "model")

    names = dataset.class_names
    labels = {}
    for r, _ in results:
        labels.update(r.labels)
    test = sorted(dataset.test, key=lambda s: s.name)
    _jsonl(out / PSEUDO_LABELS_FILE, [{"name": s.name, "label": names[labels[s.id]]} for s in test])
    if test:
        preds = model.predict([s.name for s in test], np.stack([s.features for s in test]))
    else:
        preds = []
    _jsonl(out / PREDICTIONS_FILE,
           [{"name": s.name, "predicted_label": names[int(p)]} for s, p in zip(test, preds)])

    report = _base_report("run", exp)
    rows = []
    evaluation = None
    if truth is not None and test:
        truth_by_id = {s.id: truth[s.name] for s in test}
        evaluation = evaluate(model, test, truth_by_id)
    for g, (r, _) in zip(groups, results):
        hist = list(r.history)
        row = {
            "date": g.date,
            "n_train": len(g.train),
            "n_test": len(g.test),
            "rounds": len(hist),
            "case1": sum(h["case1"] for h in hist),
            "case2": sum(h["case2"] for h in hist),
            "fallback": sum(h["fallback"] for h in hist),
            "history": hist,
        }
        if evaluation is not None and g.test:
            row["pseudo_label_accuracy"] = labels_accuracy(
                r.labels, {s.id: truth[s.name] for s in g.test}
            )
            row["test_accuracy"] = evaluation["per_group"][g.date]
        rows.append(row)
    report["groups"] = rows
    report["summary"] = {}
    if evaluation is not None:
        scored = [r["pseudo_label_accuracy"] for r in rows if "pseudo_label_accuracy" in r]
        report["summary"] = {
            "pseudo_label_accuracy": sum(scored) / len(scored),
            "test_accuracy": evaluation["average"],
            "test_accuracy_overall": evaluation["overall"],
        }
    report["tables"] = []
    return report


def cmd_run(args) -> int:
    started = time.perf_counter()
    exp = _experiment(args)
    if args.data is None:
        raise ConfigError("run needs --data (see gen-data)")
    dataset, truth = load_dataset(args.data)
    report = run_pipeline(dataset, truth, exp, args.out, args.jobs)
    _finish(report, args.out, started)
    return EXIT_OK


# -- ablations -----------------------------------------------------------------


def _ablation_command(name, fn):
    def cmd(args) -> int:
        started = time.perf_counter()
        exp = _experiment(args)
        dataset = load_dataset(args.data)[0] if args.data else None
        report = _base_report(name, exp)
        report["data"] = str(args.data) if args.data else "synthetic (data.seed + repetition)"
        report["groups"] = []
        report["tables"] = [fn(exp, dataset, args.jobs)]
        _finish(report, args.out, started)
        return EXIT_OK

    return cmd


cmd_ablate_split = _ablation_command("ablate-split", ablation.ablate_split)
cmd_ablate_progressive = _ablation_command("ablate-progressive", ablation.ablate_progressive)
cmd_ablate_experts = _ablation_command("ablate-experts", ablation.ablate_experts)


# -- infer / report ------------------------------------------------------------------


def cmd_infer(args) -> int:
    if args.model is None or args.data is None:
        raise ConfigError("infer needs --model and --data")
    model = load_model(args.model)
    dataset, truth = load_dataset(args.data)
    if tuple(dataset.class_names) != tuple(model.class_names):
        raise DataError("manifest class table differs from the model's")
    test = sorted(dataset.test, key=lambda s: s.name)
    if not test:
        raise DataError("manifest has no test samples")
    preds = model.predict([s.name for s in test], np.stack([s.features for s in test]))
    names = model.class_names
    out = Path(args.out)
    _jsonl(out / PREDICTIONS_FILE,
           [{"name": s.name, "predicted_label": names[int(p)]} for s, p in zip(test, preds)])
    print(f"wrote {len(test)} predictions to {out / PREDICTIONS_FILE}")
    if truth is not None:
        ev = evaluate(model, test, {s.id: truth[s.name] for s in test})
        (out / "evaluation.json").write_text(json.dumps(ev, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        for date, acc in ev["per_group"].items():
            print(f"  {date}: {100 * acc:.1f}%")
        print(f"  average: {100 * ev['average']:.1f}%  overall: {100 * ev['overall']:.1f}%")
    return EXIT_OK


def cmd_report(args) -> int:
    target = args.report or args.out
    if target is None:
        raise ConfigError("report needs --out (run directory) or --report (report.json)")
    try:
        report = read_report(target)
    except FileNotFoundError:
        raise DataError(f"no report found at {target}") from None
    print(render_report(report), end="")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate a synthetic date-shifted dataset"),
    "run": (cmd_run, "progressive pseudo-labelling + branched final model"),
    "ablate-split": (cmd_ablate_split, "per-date models vs one pooled model"),
    "ablate-progressive": (cmd_ablate_progressive, "direct voting vs progressive learning"),
    "ablate-experts": (cmd_ablate_experts, "accuracy vs number of experts"),
    "infer": (cmd_infer, "predict with a saved branched model"),
    "report": (cmd_report, "print a saved report"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deem", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
        p.add_argument("--data", help="dataset directory (manifest.jsonl, classes.json, truth.jsonl)")
        p.add_argument("--out", required=name not in ("report",), help="output directory")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "infer":
            p.add_argument("--model", help="model bundle directory written by 'run'")
        if name == "report":
            p.add_argument("--report", help="path to a report.json")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UnknownDate as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_DATE
    except MaxRoundsExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MAX_ROUNDS
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DeemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
