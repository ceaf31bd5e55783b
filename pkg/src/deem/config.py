"""Experiment configuration: one YAML file covering data, pipeline and ablations."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from .dataset import SyntheticConfig
from .errors import ConfigError
from .experts import FAMILY_ORDER, ExpertSpec
from .progressive import RunConfig

# Fraction of training samples held out for the ablations (200 of 1332).
VALIDATION_FRACTION = 200 / 1332


@dataclass(frozen=True)
class AblationConfig:
    seeds: int = 20
    validation_fraction: float = VALIDATION_FRACTION
    stratified: bool = False
    include_test: bool = True
    expert_pool: tuple = FAMILY_ORDER
    expert_counts: tuple = (1, 2, 3, 4, 5)
    stable_tolerance: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "expert_pool", tuple(self.expert_pool))
        object.__setattr__(self, "expert_counts", tuple(int(n) for n in self.expert_counts))
        if int(self.seeds) < 1:
            raise ConfigError("ablation.seeds must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("ablation.validation_fraction must lie in (0, 1)")
        if any(not 1 <= n <= len(self.expert_pool) for n in self.expert_counts):
            raise ConfigError("ablation.expert_counts must lie in 1..len(expert_pool)")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    pipeline: RunConfig = field(default_factory=RunConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict:
        pipe = self.pipeline
        return {
            "seed": self.seed,
            "data": asdict(self.data),
            "pipeline": {
                "k": pipe.k,
                "max_rounds": pipe.max_rounds,
                "fallback": pipe.fallback,
                "feature_noise": pipe.feature_noise,
                "experts": [s.to_dict() for s in pipe.specs],
            },
            "ablation": {
                **asdict(self.ablation),
                "expert_pool": list(self.ablation.expert_pool),
                "expert_counts": list(self.ablation.expert_counts),
            },
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def reseeded(self, seed: int) -> "ExperimentConfig":
        """Same experiment with every expert seed shifted to a new base seed."""
        specs = [replace(s, seed=seed + i) for i, s in enumerate(self.pipeline.specs)]
        return replace(self, seed=seed, pipeline=replace(self.pipeline, specs=tuple(specs), seed=seed))

    def pool_config(self, n: int, seed: int) -> RunConfig:
        """Pipeline config with the first ``n`` families of the ablation pool."""
        by_family = {s.family: s for s in self.pipeline.specs}
        specs = []
        for i, fam in enumerate(self.ablation.expert_pool[:n]):
            base = by_family.get(fam, ExpertSpec(fam))
            specs.append(replace(base, seed=seed + i))
        return replace(self.pipeline, specs=tuple(specs), seed=seed)


def _section(raw: dict, key: str, cls) -> dict:
    sub = raw.get(key) or {}
    if not isinstance(sub, dict):
        raise ConfigError(f"[{key}] must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = set(sub) - allowed
    if unknown:
        raise ConfigError(f"[{key}] unknown keys: {sorted(unknown)}")
    return sub


def config_from_dict(raw: Optional[dict]) -> ExperimentConfig:
    raw = raw or {}
    unknown = set(raw) - {"seed", "data", "pipeline", "ablation"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))
    try:
        data = SyntheticConfig(**_section(raw, "data", SyntheticConfig))
        pipe_raw = dict(raw.get("pipeline") or {})
        expert_raw = pipe_raw.pop("experts", None)
        allowed = {"k", "max_rounds", "fallback", "feature_noise"}
        if set(pipe_raw) - allowed:
            raise ConfigError(f"[pipeline] unknown keys: {sorted(set(pipe_raw) - allowed)}")
        if expert_raw is None:
            expert_raw = [{"family": f} for f in FAMILY_ORDER[:4]]
        specs = []
        for i, e in enumerate(expert_raw):
            if isinstance(e, str):
                e = {"family": e}
            specs.append(ExpertSpec(e["family"], dict(e.get("hyperparams") or {}), int(e.get("seed", seed + i))))
        pipeline = RunConfig(specs=tuple(specs), seed=seed, **pipe_raw)
        ablation = AblationConfig(**_section(raw, "ablation", AblationConfig))
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad configuration: {exc}") from None
    return ExperimentConfig(seed, data, pipeline, ablation)


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML ({exc})") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return config_from_dict(raw)
