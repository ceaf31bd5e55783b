"""Per-date branches unified behind filename-driven dispatch."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import parse_sample_name
from .errors import ConfigError, DataError, EmptyEvaluationSet, UnknownDate, UnlabeledTestSamples
from .experts import Ensemble, ensemble_from_json, ensemble_to_json

MODEL_FILE = "model.json"
BUNDLE_VERSION = 1


@dataclass(frozen=True)
class BranchedModel:
    branches: dict
    class_names: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.branches:
            raise ConfigError("a branched model needs at least one branch")
        sizes = {e.num_classes for e in self.branches.values()}
        if sizes != {len(self.class_names)}:
            raise ConfigError("every branch must share the model's class table")

    @property
    def dates(self) -> list[str]:
        return sorted(self.branches)

    def branch_for(self, name: str) -> Ensemble:
        date, _ = parse_sample_name(name)
        try:
            return self.branches[date]
        except KeyError:
            raise UnknownDate(f"{name!r}: no branch for date {date!r}") from None

    def predict(self, names: Sequence[str], X) -> np.ndarray:
        """Batch inference; samples are grouped per branch internally."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        out = np.empty(len(names), dtype=np.int64)
        by_date: dict = {}
        for i, n in enumerate(names):
            by_date.setdefault(parse_sample_name(n)[0], []).append(i)
        for date, idx in by_date.items():
            if date not in self.branches:
                raise UnknownDate(f"{names[idx[0]]!r}: no branch for date {date!r}")
            out[idx] = self.branches[date].predict(X[idx])
        return out


def build_final_model(groups, config, class_names, metadata: Optional[dict] = None) -> BranchedModel:
    """Train one fresh ensemble per date group on its completed training set.

    ``groups`` is a sequence of ``(DateGroup, final_train)`` pairs, where
    ``final_train`` already holds every test sample with its pseudo-label.
    """
    branches = {}
    for group, final_train in groups:
        labeled = {s.id for s in final_train if s.label is not None}
        missing = [s.id for s in group.test if s.id not in labeled]
        if missing or any(s.label is None for s in final_train):
            raise UnlabeledTestSamples(
                f"group {group.date!r}: {len(missing)} test samples still unlabeled"
            )
        branches[group.date] = config.fit_ensemble(final_train, len(class_names))
    return BranchedModel(branches, tuple(class_names), dict(metadata or {}))


def infer(model: BranchedModel, name: str, features) -> int:
    x = np.asarray(features, dtype=np.float64).reshape(1, -1)
    return int(model.branch_for(name).predict(x)[0])


def evaluate(model: BranchedModel, samples, labels: Optional[dict] = None) -> dict:
    """Top-1 accuracy per date, unweighted mean over dates, and micro overall.

    Ground truth comes from ``labels[sample.id]`` when given, else from each
    sample's ``true_label``.
    """
    samples = list(samples)
    if not samples:
        raise EmptyEvaluationSet("nothing to evaluate")
    truth = [labels[s.id] if labels is not None else s.true_label for s in samples]
    if any(t is None for t in truth):
        raise DataError("every evaluated sample needs a ground-truth label")
    preds = model.predict([s.name for s in samples], np.stack([s.features for s in samples]))
    hits: dict = {}
    for s, p, t in zip(samples, preds, truth):
        hits.setdefault(parse_sample_name(s.name)[0], []).append(p == t)
    per_group = {d: float(np.mean(hits[d])) for d in sorted(hits)}
    correct = sum(sum(v) for v in hits.values())
    return {
        "per_group": per_group,
        "average": float(np.mean(list(per_group.values()))),
        "overall": correct / len(samples),
        "count": len(samples),
    }


def save_model(model: BranchedModel, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for date in model.dates:
        (out / f"{date}.json").write_text(ensemble_to_json(model.branches[date]), encoding="utf-8")
    doc = {
        "format": "deem-branched-model",
        "version": BUNDLE_VERSION,
        "class_names": list(model.class_names),
        "branches": model.dates,
        "metadata": model.metadata,
    }
    (out / MODEL_FILE).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_model(model_dir) -> BranchedModel:
    d = Path(model_dir)
    if not (d / MODEL_FILE).exists():
        raise DataError(f"{d / MODEL_FILE} not found")
    doc = json.loads((d / MODEL_FILE).read_text(encoding="utf-8"))
    if doc.get("format") != "deem-branched-model" or doc.get("version") != BUNDLE_VERSION:
        raise DataError(f"{d / MODEL_FILE}: unsupported model bundle")
    branches = {
        date: ensemble_from_json((d / f"{date}.json").read_text(encoding="utf-8"))
        for date in doc["branches"]
    }
    return BranchedModel(branches, tuple(doc["class_names"]), doc.get("metadata", {}))

