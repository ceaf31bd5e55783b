"""Lightweight expert classifiers with a common fit / predict_proba / transform API.

Every expert standardizes its inputs, keeps a fixed class set
``range(n_classes)`` and gives classes absent from its training data a
probability of exactly zero.  ``transform`` returns the expert's embedding,
the space in which nearest-neighbour label confirmation is done.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import ConfigError, DimensionMismatch, EmptyTrainingSet, InvalidN

VARIANCE_FLOOR = 1e-8
FORMAT_VERSION = 1


def _masked_softmax(logits: np.ndarray, present: np.ndarray) -> np.ndarray:
    z = np.where(present, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p /= p.sum(axis=1, keepdims=True)
    return p


def top_labels(dist, n: int) -> list[int]:
    """Indices of the ``n`` most probable classes, ties to the lower index."""
    probs = np.asarray(dist, dtype=np.float64)
    if not 1 <= n <= probs.shape[0]:
        raise InvalidN(f"n={n} outside [1, {probs.shape[0]}]")
    order = np.lexsort((np.arange(probs.shape[0]), -probs))
    return [int(i) for i in order[:n]]


class BaseExpert(ClassifierMixin, BaseEstimator):
    """Shared input handling: validation, class bookkeeping, standardization."""

    family = None

    def _check_params(self):
        pass

    def _validate_X(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64, ensure_2d=False)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(
                f"{type(self).__name__} expects {self.n_features_in_} features, got {X.shape[1]}"
            )
        return X

    def _standardize(self, X):
        return (X - self.mean_) / self.scale_

    def fit(self, X, y):
        self._check_params()
        X = np.asarray(X, dtype=np.float64)
        if X.size == 0 or len(y) == 0:
            raise EmptyTrainingSet(f"{type(self).__name__}: no training samples")
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        n_classes = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= n_classes:
            raise ConfigError(f"labels must lie in [0, {n_classes})")
        self.classes_ = np.arange(n_classes)
        self.present_ = np.bincount(y, minlength=n_classes) > 0
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.sqrt(np.maximum(X.var(axis=0), VARIANCE_FLOOR))
        self._fit_standardized(self._standardize(X), y)
        return self

    def predict_proba(self, X):
        Z = self._standardize(self._validate_X(X))
        return _masked_softmax(self._logits(Z), self.present_)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X):
        return self._embed(self._standardize(self._validate_X(X)))

    def embed(self, X):
        return self.transform(X)

    def _centroids(self, Z, y):
        C = self.classes_.shape[0]
        cent = np.zeros((C, Z.shape[1]))
        for c in np.flatnonzero(self.present_):
            cent[c] = Z[y == c].mean(axis=0)
        return cent

    @staticmethod
    def _sq_dist(A, B):
        d = (A * A).sum(1)[:, None] - 2.0 * A @ B.T + (B * B).sum(1)[None, :]
        return np.maximum(d, 0.0)


class NearestCentroidExpert(BaseExpert):
    family = "nearest_centroid"

    def __init__(self, temperature=1.0, n_classes=None):
        self.temperature = temperature
        self.n_classes = n_classes

    def _check_params(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")

    def _fit_standardized(self, Z, y):
        self.centroids_ = self._centroids(Z, y)

    def _logits(self, Z):
        return -np.sqrt(self._sq_dist(Z, self.centroids_)) / self.temperature

    def _embed(self, Z):
        return Z


def softmax_loss_grad(W, b, Z, y, present, weight_decay):
    """Mean cross-entropy plus ``weight_decay/2 * ||W||^2`` and its gradient.

    Returns ``(loss, dW, db)``.  Absent classes are masked out of the softmax.
    """
    n = Z.shape[0]
    P = _masked_softmax(Z @ W + b, present)
    picked = P[np.arange(n), y]
    loss = -np.mean(np.log(np.maximum(picked, 1e-300))) + 0.5 * weight_decay * np.sum(W * W)
    G = P.copy()
    G[np.arange(n), y] -= 1.0
    G /= n
    return loss, Z.T @ G + weight_decay * W, G.sum(axis=0)


class LogisticRegressionExpert(BaseExpert):
    """Multinomial logistic regression fit by full-batch gradient descent."""

    family = "logistic_regression"

    def __init__(self, learning_rate=0.1, epochs=300, weight_decay=1e-3, n_classes=None):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.n_classes = n_classes

    def _check_params(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if int(self.epochs) < 0:
            raise ConfigError("epochs must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    def _fit_standardized(self, Z, y):
        C = self.classes_.shape[0]
        W = np.zeros((Z.shape[1], C))
        b = np.zeros(C)
        for _ in range(int(self.epochs)):
            _, dW, db = softmax_loss_grad(W, b, Z, y, self.present_, self.weight_decay)
            W -= self.learning_rate * dW
            b -= self.learning_rate * db
        self.coef_ = W
        self.intercept_ = b

    def _logits(self, Z):
        return Z @ self.coef_ + self.intercept_

    def _embed(self, Z):
        return self._logits(Z)


class KNNExpert(BaseExpert):
    """k-nearest neighbours in standardized space; Laplace-smoothed vote shares."""

    family = "knn"

    def __init__(self, n_neighbors=7, smoothing=1.0, n_classes=None):
        self.n_neighbors = n_neighbors
        self.smoothing = smoothing
        self.n_classes = n_classes

    def _check_params(self):
        if int(self.n_neighbors) < 1:
            raise ConfigError("n_neighbors must be >= 1")
        if self.smoothing < 0:
            raise ConfigError("smoothing must be >= 0")

    def _fit_standardized(self, Z, y):
        self.train_ = Z
        self.train_labels_ = y

    def predict_proba(self, X):
        Z = self._standardize(self._validate_X(X))
        k = min(int(self.n_neighbors), self.train_.shape[0])
        d = self._sq_dist(Z, self.train_)
        nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
        C = self.classes_.shape[0]
        counts = np.zeros((Z.shape[0], C))
        for i, row in enumerate(self.train_labels_[nbrs]):
            counts[i] = np.bincount(row, minlength=C)
        counts = np.where(self.present_, counts + self.smoothing, 0.0)
        p = counts / counts.sum(axis=1, keepdims=True)
        return p / p.sum(axis=1, keepdims=True)

    def _embed(self, Z):
        return Z


class GaussianNBExpert(BaseExpert):
    family = "gaussian_nb"

    def __init__(self, var_floor=1e-2, n_classes=None):
        self.var_floor = var_floor
        self.n_classes = n_classes

    def _check_params(self):
        if not self.var_floor > 0:
            raise ConfigError("var_floor must be positive")

    def _fit_standardized(self, Z, y):
        C = self.classes_.shape[0]
        self.theta_ = self._centroids(Z, y)
        self.var_ = np.ones((C, Z.shape[1]))
        counts = np.bincount(y, minlength=C)
        for c in np.flatnonzero(self.present_):
            self.var_[c] = np.maximum(Z[y == c].var(axis=0), self.var_floor)
        self.log_prior_ = np.where(self.present_, np.log(np.maximum(counts, 1) / len(y)), 0.0)

    def _log_likelihood(self, Z):
        ll = -0.5 * (
            np.log(2 * np.pi * self.var_).sum(axis=1)[None, :]
            + (((Z[:, None, :] - self.theta_[None]) ** 2) / self.var_[None]).sum(axis=2)
        )
        return ll

    def _logits(self, Z):
        return self._log_likelihood(Z) + self.log_prior_

    def _embed(self, Z):
        return self._log_likelihood(Z)[:, self.present_]


class RandomProjectionCentroidExpert(BaseExpert):
    """Nearest centroid after a seeded Gaussian random projection."""

    family = "random_projection_centroid"

    def __init__(self, n_components=16, temperature=1.0, random_state=0, n_classes=None):
        self.n_components = n_components
        self.temperature = temperature
        self.random_state = random_state
        self.n_classes = n_classes

    def _check_params(self):
        if int(self.n_components) < 1:
            raise ConfigError("n_components must be >= 1")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")

    def _fit_standardized(self, Z, y):
        rng = np.random.default_rng(self.random_state)
        k = int(self.n_components)
        self.components_ = rng.standard_normal((Z.shape[1], k)) / np.sqrt(k)
        self.centroids_ = self._centroids(Z @ self.components_, y)

    def _logits(self, Z):
        return -np.sqrt(self._sq_dist(Z @ self.components_, self.centroids_)) / self.temperature

    def _embed(self, Z):
        return Z @ self.components_


FAMILIES = {
    cls.family: cls
    for cls in (
        NearestCentroidExpert,
        LogisticRegressionExpert,
        KNNExpert,
        GaussianNBExpert,
        RandomProjectionCentroidExpert,
    )
}

# Order in which ensembles of size 1..5 are assembled.
FAMILY_ORDER = (
    "nearest_centroid",
    "logistic_regression",
    "knn",
    "gaussian_nb",
    "random_projection_centroid",
)


@dataclass(frozen=True)
class ExpertSpec:
    family: str
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown expert family {self.family!r}; choose from {sorted(FAMILIES)}")
        self.build(n_classes=None)._check_params()

    def build(self, n_classes: Optional[int]) -> BaseExpert:
        cls = FAMILIES[self.family]
        allowed = set(cls().get_params()) - {"n_classes", "random_state"}
        unknown = set(self.hyperparams) - allowed
        if unknown:
            raise ConfigError(f"{self.family}: unknown hyperparameters {sorted(unknown)}")
        params = dict(self.hyperparams, n_classes=n_classes)
        if "random_state" in cls().get_params():
            params["random_state"] = self.seed
        return cls(**params)

    def to_dict(self) -> dict:
        return {"family": self.family, "hyperparams": dict(self.hyperparams), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertSpec":
        return cls(d["family"], dict(d.get("hyperparams") or {}), int(d.get("seed", 0)))


def default_specs(n: int = 4, seed: int = 0) -> list[ExpertSpec]:
    if not 1 <= n <= len(FAMILY_ORDER):
        raise ConfigError(f"default ensembles have 1..{len(FAMILY_ORDER)} experts")
    return [ExpertSpec(f, {}, seed + i) for i, f in enumerate(FAMILY_ORDER[:n])]


def samples_to_xy(samples):
    X = np.stack([s.features for s in samples]) if samples else np.zeros((0, 0))
    y = np.array([s.label for s in samples], dtype=np.int64)
    return X, y


def train_expert(spec: ExpertSpec, train, num_classes: int, feature_noise: float = 0.0) -> BaseExpert:
    """Fit one expert on labelled samples (true or pseudo labels).

    ``feature_noise`` adds seeded Gaussian jitter to this expert's copy of the
    training features, which makes otherwise similar experts disagree more.
    """
    if len(train) == 0:
        raise EmptyTrainingSet("cannot train an expert on zero samples")
    X, y = samples_to_xy(train)
    if feature_noise > 0:
        rng = np.random.default_rng([int(spec.seed), 0x5EED])
        X = X + rng.standard_normal(X.shape) * feature_noise
    est = spec.build(num_classes).fit(X, y)
    est.spec_ = spec
    return est


@dataclass(frozen=True)
class Ensemble:
    experts: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "experts", tuple(self.experts))
        if not self.experts:
            raise ConfigError("an ensemble needs at least one expert")

    def __len__(self):
        return len(self.experts)

    def predict_proba(self, X) -> np.ndarray:
        """Per-expert distributions, shape ``(E, n, C)``."""
        return np.stack([e.predict_proba(X) for e in self.experts])

    def top1(self, X) -> np.ndarray:
        """Per-expert Top-1 labels, shape ``(n, E)``."""
        return np.argmax(self.predict_proba(X), axis=2).T

    def predict(self, X) -> np.ndarray:
        return np.array([plurality(row) for row in self.top1(X)], dtype=np.int64)


def plurality(votes: Sequence[int]) -> int:
    """Most frequent vote; frequency ties go to the lower class index."""
    counts = Counter(int(v) for v in votes)
    best = max(counts.values())
    return min(c for c, n in counts.items() if n == best)


def train_ensemble(specs, train, num_classes: int, feature_noise: float = 0.0) -> Ensemble:
    if not specs:
        raise ConfigError("at least one expert spec is required")
    return Ensemble([train_expert(s, train, num_classes, feature_noise) for s in specs], num_classes)


# -- serialization -------------------------------------------------------------


def _fitted_state(est: BaseExpert) -> dict:
    state = {}
    for key, val in sorted(vars(est).items()):
        if not key.endswith("_") or key.startswith("_") or key == "spec_":
            continue
        if isinstance(val, np.ndarray):
            state[key] = {"dtype": val.dtype.str, "shape": list(val.shape), "data": val.ravel().tolist()}
        else:
            state[key] = val
    return state


def expert_to_dict(est: BaseExpert) -> dict:
    return {
        "family": est.family,
        "params": est.get_params(),
        "spec": est.spec_.to_dict() if hasattr(est, "spec_") else None,
        "state": _fitted_state(est),
    }


def expert_from_dict(d: dict) -> BaseExpert:
    est = FAMILIES[d["family"]](**d["params"])
    for key, val in d["state"].items():
        if isinstance(val, dict) and "data" in val:
            val = np.array(val["data"], dtype=np.dtype(val["dtype"])).reshape(val["shape"])
        setattr(est, key, val)
    if d.get("spec"):
        est.spec_ = ExpertSpec.from_dict(d["spec"])
    return est


def ensemble_to_json(ens: Ensemble) -> str:
    doc = {
        "format": "deem-ensemble",
        "version": FORMAT_VERSION,
        "num_classes": ens.num_classes,
        "experts": [expert_to_dict(e) for e in ens.experts],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def ensemble_from_json(text: str) -> Ensemble:
    doc = json.loads(text)
    if doc.get("format") != "deem-ensemble" or doc.get("version") != FORMAT_VERSION:
        raise ConfigError("not a version-1 deem ensemble file")
    return Ensemble([expert_from_dict(e) for e in doc["experts"]], int(doc["num_classes"]))
