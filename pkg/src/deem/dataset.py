"""Samples, manifests, date partitioning and the synthetic domain-shift generator.

A sample name has the form ``<date>_<sequence>.<ext>``; the date token drives
both partitioning during training and branch selection at inference.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, InvalidCount, MalformedName

TRAIN = "train"
TEST = "test"

DEFAULT_CLASS_NAMES = (
    "NPKCa+m+s",
    "NPKCa",
    "_PKCa",
    "N_KCa",
    "NP_Ca",
    "NPK_",
    "unfertilized",
)

MANIFEST_FILE = "manifest.jsonl"
TRUTH_FILE = "truth.jsonl"
CLASSES_FILE = "classes.json"

_SEQUENCE_RE = re.compile(r"[+-]?\d+")


def parse_sample_name(name: str) -> tuple[str, int]:
    """Split ``"20200314_0001.jpg"`` into ``("20200314", 1)``.

    The date is everything before the last underscore of the stem, so date
    tokens may themselves contain underscores.
    """
    base = os.path.basename(name)
    stem, dot, ext = base.rpartition(".")
    if not dot or not stem or not ext:
        raise MalformedName(f"{name!r}: missing file extension")
    date, sep, seq = stem.rpartition("_")
    if not sep:
        raise MalformedName(f"{name!r}: no '_' separating date and sequence")
    if not date:
        raise MalformedName(f"{name!r}: empty date token")
    if not _SEQUENCE_RE.fullmatch(seq):
        raise MalformedName(f"{name!r}: sequence {seq!r} is not an integer")
    return date, int(seq)


def format_sample_name(date: str, sequence: int, ext: str = "jpg") -> str:
    return f"{date}_{sequence:04d}.{ext}"


def sample_date(sample: "Sample") -> str:
    return parse_sample_name(sample.name)[0]


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    name: str
    features: np.ndarray
    split: str
    true_label: Optional[int] = None
    pseudo_label: Optional[int] = None

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise DataError(f"{self.name}: features must be a 1-d vector")
        if not np.all(np.isfinite(feats)):
            raise DataError(f"{self.name}: features contain non-finite values")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        if self.split not in (TRAIN, TEST):
            raise DataError(f"{self.name}: unknown split {self.split!r}")
        if self.split == TRAIN and self.true_label is None:
            raise DataError(f"{self.name}: training sample without a label")
        if self.split == TRAIN and self.pseudo_label is not None:
            raise DataError(f"{self.name}: pseudo-labels apply to test samples only")
        parse_sample_name(self.name)

    @property
    def label(self) -> Optional[int]:
        """Training target: the true label if known, else the pseudo-label."""
        return self.true_label if self.true_label is not None else self.pseudo_label

    def with_pseudo_label(self, label: int) -> "Sample":
        return replace(self, pseudo_label=int(label))

    def same_as(self, other: "Sample") -> bool:
        return (
            self.id == other.id
            and self.name == other.name
            and self.split == other.split
            and self.true_label == other.true_label
            and self.pseudo_label == other.pseudo_label
            and np.array_equal(self.features, other.features)
        )


def make_sample(name, features, split, label=None) -> Sample:
    return Sample(id=name, name=name, features=features, split=split, true_label=label)


@dataclass(frozen=True, eq=False)
class Dataset:
    train: tuple
    test: tuple
    num_classes: int
    dim: int
    class_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        if not self.class_names:
            object.__setattr__(self, "class_names", default_class_names(self.num_classes))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(self.class_names) != self.num_classes:
            raise DataError("class table length does not match num_classes")
        seen = set()
        for s in self.train + self.test:
            if s.id in seen:
                raise DataError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if s.features.shape[0] != self.dim:
                raise DataError(f"{s.name}: expected {self.dim} features, got {s.features.shape[0]}")
            for lab in (s.true_label, s.pseudo_label):
                if lab is not None and not 0 <= lab < self.num_classes:
                    raise DataError(f"{s.name}: label {lab} outside [0, {self.num_classes})")
        for s in self.train:
            if s.split != TRAIN:
                raise DataError(f"{s.name}: listed under train but split={s.split}")
        for s in self.test:
            if s.split != TEST:
                raise DataError(f"{s.name}: listed under test but split={s.split}")


def default_class_names(num_classes: int) -> tuple:
    if num_classes == len(DEFAULT_CLASS_NAMES):
        return DEFAULT_CLASS_NAMES
    return tuple(f"class_{i}" for i in range(num_classes))


@dataclass(frozen=True)
class DateGroup:
    date: str
    train: tuple
    test: tuple


def derive_date_set(dataset: Dataset) -> list[str]:
    return sorted({sample_date(s) for s in dataset.train + dataset.test})


def partition_by_date(dataset: Dataset) -> list[DateGroup]:
    """Group train and test samples sharing a collection date, dates ascending."""
    train_by: dict[str, list] = {}
    test_by: dict[str, list] = {}
    for s in dataset.train:
        train_by.setdefault(sample_date(s), []).append(s)
    for s in dataset.test:
        test_by.setdefault(sample_date(s), []).append(s)
    return [
        DateGroup(date, tuple(train_by.get(date, ())), tuple(test_by.get(date, ())))
        for date in derive_date_set(dataset)
    ]


def reserve_validation(train: Sequence[Sample], n: int, seed, stratified: bool = False):
    """Hold out ``n`` labelled samples, uniformly at random without replacement.

    With ``stratified=True`` the hold-out is allocated across classes in
    proportion to class frequency (largest-remainder rounding).  Both outputs
    keep the input order.
    """
    train = list(train)
    if not 0 < n < len(train):
        raise InvalidCount(f"cannot reserve {n} of {len(train)} samples")
    rng = np.random.default_rng(seed)
    if not stratified:
        chosen = set(rng.choice(len(train), size=n, replace=False).tolist())
    else:
        by_class: dict[int, list[int]] = {}
        for i, s in enumerate(train):
            by_class.setdefault(s.true_label, []).append(i)
        classes = sorted(by_class)
        exact = np.array([n * len(by_class[c]) / len(train) for c in classes])
        quota = np.floor(exact).astype(int)
        order = np.argsort(-(exact - quota), kind="stable")
        quota[order[: n - quota.sum()]] += 1
        chosen = set()
        for c, q in zip(classes, quota):
            idx = by_class[c]
            chosen.update(idx[j] for j in rng.choice(len(idx), size=int(q), replace=False))
    rest = [s for i, s in enumerate(train) if i not in chosen]
    val = [s for i, s in enumerate(train) if i in chosen]
    return rest, val


@dataclass(frozen=True)
class SyntheticConfig:
    num_groups: int = 3
    num_classes: int = 7
    dim: int = 16
    train_per_group: int = 120
    test_per_group: int = 40
    shift_scale: float = 6.0
    class_sep: float = 3.0
    noise_sd: float = 1.0
    seed: int = 42

    def __post_init__(self):
        for key in ("num_groups", "num_classes", "dim", "train_per_group", "test_per_group"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.shift_scale < 0:
            raise ConfigError("shift_scale must be >= 0")
        if self.class_sep <= 0 or self.noise_sd <= 0:
            raise ConfigError("class_sep and noise_sd must be positive")


def synthetic_date(group: int) -> str:
    return f"synth{group:04d}"


def _unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _class_directions(rng, n, d):
    """Unit-norm, pairwise equidistant directions (a randomly rotated simplex).

    Falls back to independent random directions when ``n > d``.
    """
    if n == 1:
        return np.zeros((1, d))
    if n > d:
        return _unit_rows(rng, n, d)
    simplex = np.eye(n) - 1.0 / n
    simplex /= np.linalg.norm(simplex, axis=1, keepdims=True)
    basis, _ = np.linalg.qr(rng.standard_normal((d, n)))
    return simplex @ basis.T


def generate_synthetic(config: SyntheticConfig) -> tuple[Dataset, dict]:
    """Draw a dataset whose date groups differ by a mean offset.

    Group ``m`` (1-based) is displaced by a random direction of length
    ``shift_scale * m``; class ``c`` sits at ``class_sep`` along a class
    direction shared by all groups (directions form a regular simplex).  Returns the dataset and the hidden
    ``{test name: label}`` truth, which never enters the dataset itself.
    """
    cfg = config
    root = np.random.SeedSequence(cfg.seed)
    class_rng, *group_seeds = root.spawn(cfg.num_groups + 1)
    class_dirs = _class_directions(np.random.default_rng(class_rng), cfg.num_classes, cfg.dim)

    train, test, truth = [], [], {}
    for m in range(1, cfg.num_groups + 1):
        rng = np.random.default_rng(group_seeds[m - 1])
        offset = _unit_rows(rng, 1, cfg.dim)[0] * cfg.shift_scale * m
        date = synthetic_date(m)
        n_total = cfg.train_per_group + cfg.test_per_group
        labels = rng.integers(0, cfg.num_classes, size=n_total)
        noise = rng.standard_normal((n_total, cfg.dim)) * cfg.noise_sd
        X = offset + cfg.class_sep * class_dirs[labels] + noise
        for j in range(n_total):
            name = format_sample_name(date, j + 1)
            if j < cfg.train_per_group:
                train.append(make_sample(name, X[j], TRAIN, int(labels[j])))
            else:
                test.append(make_sample(name, X[j], TEST))
                truth[name] = int(labels[j])
    ds = Dataset(train, test, cfg.num_classes, cfg.dim, default_class_names(cfg.num_classes))
    return ds, truth


# -- files -------------------------------------------------------------------


def _dump_line(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n"


def write_manifest(dataset: Dataset, path) -> None:
    names = dataset.class_names
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in dataset.train + dataset.test:
            label = names[s.true_label] if s.true_label is not None else None
            fh.write(_dump_line({
                "name": s.name,
                "split": s.split,
                "label": label,
                "features": [float(v) for v in s.features],
            }))


def write_class_table(class_names: Iterable[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(list(class_names), fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def read_class_table(path) -> tuple:
    with open(path, encoding="utf-8") as fh:
        names = json.load(fh)
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise DataError(f"{path}: class table must be a JSON list of strings")
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate class names")
    return tuple(names)


def write_truth(truth: dict, class_names: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name in sorted(truth):
            fh.write(_dump_line({"name": name, "label": class_names[truth[name]]}))


def _label_index(label, lookup, where):
    try:
        return lookup[label]
    except KeyError:
        raise DataError(f"{where}: unknown class name {label!r}") from None


def read_truth(path, class_names: Sequence[str]) -> dict:
    lookup = {n: i for i, n in enumerate(class_names)}
    truth = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            truth[rec["name"]] = _label_index(rec["label"], lookup, f"{path}:{lineno}")
    return truth


def read_manifest(path, class_names: Sequence[str]) -> Dataset:
    lookup = {n: i for i, n in enumerate(class_names)}
    train, test = [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
                name, split, feats = rec["name"], rec["split"], rec["features"]
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{where}: bad manifest record ({exc})") from None
            label = rec.get("label")
            idx = None if label is None else _label_index(label, lookup, where)
            if split == TEST and idx is not None:
                raise DataError(f"{where}: test samples must not carry labels")
            s = make_sample(name, feats, split, idx)
            dim = s.features.shape[0] if dim is None else dim
            (train if split == TRAIN else test).append(s)
    if dim is None:
        raise DataError(f"{path}: manifest is empty")
    return Dataset(train, test, len(class_names), dim, tuple(class_names))


def save_dataset(dataset: Dataset, out_dir, truth: Optional[dict] = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(dataset, out / MANIFEST_FILE)
    write_class_table(dataset.class_names, out / CLASSES_FILE)
    if truth is not None:
        write_truth(truth, dataset.class_names, out / TRUTH_FILE)


def load_dataset(data_dir) -> tuple[Dataset, Optional[dict]]:
    """Load manifest + class table; the truth sidecar is returned if present."""
    d = Path(data_dir)
    for required in (MANIFEST_FILE, CLASSES_FILE):
        if not (d / required).exists():
            raise DataError(f"{d / required} not found")
    names = read_class_table(d / CLASSES_FILE)
    ds = read_manifest(d / MANIFEST_FILE, names)
    truth = read_truth(d / TRUTH_FILE, names) if (d / TRUTH_FILE).exists() else None
    return ds, truth
