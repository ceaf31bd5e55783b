"""scikit-learn style wrapper around the whole date-split pseudo-labelling pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import TEST, TRAIN, Dataset, Sample, partition_by_date
from .errors import ConfigError, DataError
from .experts import ExpertSpec, default_specs
from .progressive import RunConfig, run_to_completion
from .router import build_final_model

UNLABELED = -1


class DEEMClassifier(ClassifierMixin, BaseEstimator):
    """Transductive classifier that splits by date, self-trains, and routes.

    Follows the scikit-learn semi-supervised convention: in ``fit``, rows with
    ``y == -1`` are unlabeled and receive pseudo-labels (``transduction_``).
    Sample names of the form ``<date>_<seq>.<ext>`` must be passed as
    ``names`` to both ``fit`` and ``predict``.

    Parameters
    ----------
    experts : list of ExpertSpec, dict or str, optional
        Ensemble members; defaults to the four standard families.
    k : int
        Neighbours per expert for the similarity check.
    max_rounds : int, optional
        Round cap per date group; ``None`` means ``n_unlabeled + 1``.
    fallback : bool
        Force-label the most confident sample when a round labels nothing.
    feature_noise : float
        Std of per-expert Gaussian jitter on training features.
    n_classes : int, optional
        Size of the class set; inferred from ``y`` when omitted.
    """

    def __init__(self, experts=None, k=10, max_rounds=None, fallback=True, feature_noise=0.0,
                 n_classes=None):
        self.experts = experts
        self.k = k
        self.max_rounds = max_rounds
        self.fallback = fallback
        self.feature_noise = feature_noise
        self.n_classes = n_classes

    def _run_config(self) -> RunConfig:
        if self.experts is None:
            specs = default_specs(4)
        else:
            specs = []
            for i, e in enumerate(self.experts):
                if isinstance(e, str):
                    e = ExpertSpec(e, {}, i)
                elif isinstance(e, dict):
                    e = ExpertSpec.from_dict({"seed": i, **e})
                specs.append(e)
        return RunConfig(specs=tuple(specs), k=self.k, max_rounds=self.max_rounds,
                         fallback=self.fallback, feature_noise=self.feature_noise)

    def fit(self, X, y, names):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        names = [str(n) for n in names]
        if not (len(names) == len(y) == X.shape[0]):
            raise DataError("X, y and names must have the same length")
        if len(set(names)) != len(names):
            raise DataError("sample names must be unique")
        labeled = y != UNLABELED
        if not labeled.any():
            raise DataError("at least one labelled sample is required")
        n_classes = self.n_classes if self.n_classes is not None else int(y[labeled].max()) + 1
        if y[labeled].min() < 0 or y[labeled].max() >= n_classes:
            raise ConfigError(f"labels must be -1 or lie in [0, {n_classes})")

        samples = [
            Sample(n, n, x, TRAIN, int(t)) if t != UNLABELED else Sample(n, n, x, TEST)
            for n, x, t in zip(names, X, y)
        ]
        dataset = Dataset(
            [s for s in samples if s.split == TRAIN],
            [s for s in samples if s.split == TEST],
            n_classes,
            X.shape[1],
        )
        config = self._run_config()
        groups = partition_by_date(dataset)
        results = {}
        for g in groups:
            if g.test and not g.train:
                raise DataError(f"date {g.date!r} has unlabeled samples but no labelled ones")
            if g.train:
                results[g.date] = run_to_completion(g, config, n_classes)

        self.model_ = build_final_model(
            [(g, results[g.date].train) for g in groups if g.date in results],
            config,
            dataset.class_names,
        )
        pseudo = {}
        for r in results.values():
            pseudo.update(r.labels)
        self.transduction_ = np.array([pseudo.get(n, t) for n, t in zip(names, y)], dtype=np.int64)
        self.history_ = {d: list(r.history) for d, r in results.items()}
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, names):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.predict([str(n) for n in names], X)

    def score(self, X, y, names, sample_weight=None):
        return float(np.average(self.predict(X, names) == np.asarray(y), weights=sample_weight))
