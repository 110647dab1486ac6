"""Experiment descriptor: a versioned TOML file mapped onto typed dataclasses.

Every table corresponds to one dataclass and unknown keys are rejected::

    format_version = 1
    seed = 17
    output_dir = "runs/smoke"

    [dataset]            # source = "synth" | "manifest"
    [dataset.synth]      # SynthSpec fields
    [backbone]           # BackboneSpec fields
    [fusion]             # FusionConfig fields (d_model defaults to the backbone's)
    [model]              # head / metadata options
    [train]              # TrainConfig fields
    [augment]            # AugmentPolicy fields
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

import tomli

from .autodiff import ConfigurationError
from .data.augment import AugmentPolicy
from .data.synth import SynthSpec
from .fusion import FusionConfig
from .model import BackboneSpec, ModelConfig
from .train import TrainConfig

CONFIG_FORMAT = 1
OUTPUT_ENV = "PASTUREFUSE_OUT"


@dataclass
class DatasetConfig:
    source: str = "synth"
    manifest: str = ""
    vocab: str = ""
    synth: SynthSpec = field(default_factory=SynthSpec)

    def __post_init__(self):
        if self.source not in ("synth", "manifest"):
            raise ConfigurationError(f"dataset.source must be 'synth' or 'manifest', got {self.source!r}")


@dataclass
class ModelOptions:
    metadata: bool = False
    head_hidden: int = 512
    head_dropout: float = 0.2
    meta_hidden: int = 64
    meta_drop_p: float = 0.2


@dataclass
class ExperimentConfig:
    seed: int = 17
    output_dir: str = ""
    precision: str = "f64"
    n_folds: int = 5
    folds: list = field(default_factory=list)   # empty = all folds
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    model: ModelOptions = field(default_factory=ModelOptions)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    format_version: int = CONFIG_FORMAT

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(self.backbone, self.fusion, m.head_hidden, m.head_dropout, m.metadata,
                           m.meta_hidden, m.meta_drop_p)

    def fold_list(self) -> list[int]:
        return list(self.folds) if self.folds else list(range(self.n_folds))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self, base: Path | None = None) -> None:
        if self.format_version != CONFIG_FORMAT:
            raise ConfigurationError(f"unsupported config format_version {self.format_version}")
        if self.precision not in ("f32", "f64"):
            raise ConfigurationError(f"precision must be f32 or f64, got {self.precision!r}")
        if any(not 0 <= k < self.n_folds for k in self.fold_list()):
            raise ConfigurationError("fold indices out of range")
        self.model_config()
        if self.dataset.source == "manifest":
            for label, p in (("manifest", self.dataset.manifest), ("vocab", self.dataset.vocab)):
                if label == "vocab" and not p:
                    continue
                if not Path(p).exists():
                    raise ConfigurationError(f"dataset.{label} path does not exist: {p}")

    def resolved_output(self, override: str | None = None) -> Path:
        if override:
            return Path(override)
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ENV, "runs")) / "experiment"


def _coerce(name: str, value: Any, hint: Any):
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigurationError(f"[{name}] must be a table")
        return build(hint, value, name)
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    base = {"int": int, "float": float, "str": str, "bool": bool, "list": list}
    expected = hint if isinstance(hint, type) else None
    if expected is None:
        text = str(hint)
        for key, typ in base.items():
            if text.startswith(key):
                expected = typ
                break
    if expected is not None and not isinstance(value, expected):
        raise ConfigurationError(f"{name}: expected {expected.__name__}, got {type(value).__name__}")
    if expected is int and isinstance(value, bool):
        raise ConfigurationError(f"{name}: expected int, got bool")
    return value


def build(cls, raw: dict, prefix: str = ""):
    """Instantiate dataclass ``cls`` from ``raw`` with strict key and type checks."""
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        where = f"[{prefix}]" if prefix else "top level"
        raise ConfigurationError(f"unknown key(s) {sorted(unknown)} in {where}")
    kwargs = {k: _coerce(f"{prefix}.{k}" if prefix else k, v, hints[k]) for k, v in raw.items()}
    return cls(**kwargs)


def parse_config(text: str) -> ExperimentConfig:
    raw = tomli.loads(text)
    raw.setdefault("format_version", CONFIG_FORMAT)
    fusion = raw.setdefault("fusion", {})
    if "d_model" not in fusion:
        fusion["d_model"] = raw.get("backbone", {}).get("d_model", BackboneSpec().d_model)
    return build(ExperimentConfig, raw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"))
    if cfg.dataset.source == "manifest":
        base = path.parent
        if cfg.dataset.manifest and not Path(cfg.dataset.manifest).is_absolute():
            cfg.dataset.manifest = str(base / cfg.dataset.manifest)
        if cfg.dataset.vocab and not Path(cfg.dataset.vocab).is_absolute():
            cfg.dataset.vocab = str(base / cfg.dataset.vocab)
    cfg.validate()
    return cfg
