"""Self-training loop: label what the ensemble agrees on, fold it in, retrain."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .dataset import DateGroup
from .errors import ConfigError, MaxRoundsExceeded
from .experts import Ensemble, ExpertSpec, default_specs, plurality, train_ensemble
from .pseudolabel import PseudoLabelBatch, assign_pseudo_labels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    specs: tuple = field(default_factory=lambda: tuple(default_specs(4)))
    k: int = 10
    max_rounds: Optional[int] = None  # None: |test| + 1
    fallback: bool = True
    feature_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if not self.specs:
            raise ConfigError("at least one expert spec is required")
        if not all(isinstance(s, ExpertSpec) for s in self.specs):
            raise ConfigError("specs must be ExpertSpec instances")
        if int(self.k) < 1:
            raise ConfigError("k must be >= 1")
        if self.max_rounds is not None and int(self.max_rounds) < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.feature_noise < 0:
            raise ConfigError("feature_noise must be >= 0")

    def with_experts(self, n: int) -> "RunConfig":
        return replace(self, specs=self.specs[:n])

    def fit_ensemble(self, train, num_classes) -> Ensemble:
        return train_ensemble(self.specs, train, num_classes, self.feature_noise)


@dataclass(frozen=True)
class RoundState:
    round_index: int
    train_current: tuple
    unlabeled: tuple
    ensemble: Ensemble
    num_classes: int
    labels: dict = field(default_factory=dict)
    history: tuple = ()


def initial_state(group: DateGroup, config: RunConfig, num_classes: int) -> RoundState:
    return RoundState(
        round_index=0,
        train_current=tuple(group.train),
        unlabeled=tuple(sorted(group.test, key=lambda s: s.id)),
        ensemble=config.fit_ensemble(group.train, num_classes),
        num_classes=num_classes,
    )


def force_label_fallback(state: RoundState) -> tuple[str, int]:
    """Label the single most confident unlabeled sample by plurality vote.

    Confidence is the expert-averaged maximum class probability; ties go to
    the lower sample id.
    """
    pool = sorted(state.unlabeled, key=lambda s: s.id)
    X = np.stack([s.features for s in pool])
    probs = state.ensemble.predict_proba(X)
    confidence = probs.max(axis=2).mean(axis=0)
    i = int(np.argmax(confidence))
    return pool[i].id, plurality(np.argmax(probs[:, i, :], axis=1))


def run_round(state: RoundState, config: RunConfig, audit: Optional[Callable] = None) -> RoundState:
    """Label, incorporate, retrain from scratch; returns the next state."""
    if not state.unlabeled:
        raise ConfigError("run_round called with nothing left to label")
    k = min(int(config.k), len(state.train_current))
    if k < config.k:
        log.warning("k=%d clamped to training size %d", config.k, k)
    batch = assign_pseudo_labels(state.ensemble, state.unlabeled, state.train_current, k)
    new_labels = batch.labeled
    fallback = None
    if not new_labels:
        if not config.fallback:
            log.info("round %d labelled nothing and fallback is disabled", state.round_index)
        else:
            fallback = force_label_fallback(state)
            new_labels = dict([fallback])
            log.info("round %d stalled; fallback labelled %s", state.round_index, fallback[0])
    if audit is not None:
        audit(state.round_index, batch, fallback)

    moved = [s.with_pseudo_label(new_labels[s.id]) for s in state.unlabeled if s.id in new_labels]
    remaining = tuple(s for s in state.unlabeled if s.id not in new_labels)
    train_current = state.train_current + tuple(moved)
    labels = dict(state.labels)
    labels.update(new_labels)
    entry = {
        "round": state.round_index,
        "case1": len(batch.case1),
        "case2": len(batch.case2),
        "abstained": len(batch.abstained),
        "fallback": int(fallback is not None),
        "labeled": len(new_labels),
        "remaining": len(remaining),
    }
    return RoundState(
        round_index=state.round_index + 1,
        train_current=train_current,
        unlabeled=remaining,
        ensemble=config.fit_ensemble(train_current, state.num_classes),
        num_classes=state.num_classes,
        labels=labels,
        history=state.history + (entry,),
    )


class GroupResult(NamedTuple):
    train: tuple
    labels: dict
    history: tuple


def run_to_completion(group: DateGroup, config: RunConfig, num_classes: int,
                      audit: Optional[Callable] = None) -> GroupResult:
    """Repeat rounds until every test sample of the group carries a pseudo-label."""
    state = initial_state(group, config, num_classes)
    cap = config.max_rounds if config.max_rounds is not None else len(group.test) + 1
    while state.unlabeled:
        if state.round_index >= cap:
            raise MaxRoundsExceeded(
                f"group {group.date!r}: {len(state.unlabeled)} samples unlabeled after {cap} rounds"
            )
        state = run_round(state, config, audit)
    return GroupResult(state.train_current, state.labels, state.history)


def direct_vote_baseline(ensemble: Ensemble, unlabeled) -> dict:
    """One-shot plurality of expert Top-1 votes; no retraining."""
    pool = sorted(unlabeled, key=lambda s: s.id)
    if not pool:
        return {}
    preds = ensemble.predict(np.stack([s.features for s in pool]))
    return {s.id: int(p) for s, p in zip(pool, preds)}


def labels_accuracy(labels: dict, truth: dict) -> float:
    if not labels:
        raise ConfigError("no labels to score")
    return float(np.mean([labels[i] == truth[i] for i in labels]))
