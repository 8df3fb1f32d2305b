"""Run configuration: model, training, tracking and data sections.

Configs are plain JSON documents.  Unknown keys are rejected at load time so
a typo never silently falls back to a default.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

PE_MODES = ("untied", "sine")
FUSION_MODES = ("concat", "cross")
LOSS_MODES = ("vfl", "bce")
AUG_MODES = ("strong", "weak")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 32
    n_blocks: int = 2
    n_heads: int = 2
    stride: int = 16
    template_size: int = 32
    search_size: int = 64
    backbone_depth: int = 1
    pe_mode: str = "untied"
    fusion_mode: str = "concat"
    loss_mode: str = "vfl"
    norm_mean: tuple = (0.485, 0.456, 0.406)
    norm_std: tuple = (0.229, 0.224, 0.225)
    seed: int = 0

    def validate(self) -> None:
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError("d_model must be a positive multiple of n_heads")
        if self.n_blocks < 0 or self.backbone_depth < 0:
            raise ConfigError("block counts must be non-negative")
        for size in (self.template_size, self.search_size):
            if size % self.stride:
                raise ConfigError(f"crop size {size} is not divisible by stride {self.stride}")
        if self.pe_mode not in PE_MODES:
            raise ConfigError(f"pe_mode must be one of {PE_MODES}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for the backbone's sinusoidal encoding")
        if len(self.norm_mean) != 3 or len(self.norm_std) != 3:
            raise ConfigError("norm_mean/norm_std need three channels")

    @property
    def template_grid(self) -> tuple:
        n = self.template_size // self.stride
        return (n, n)

    @property
    def search_grid(self) -> tuple:
        n = self.search_size // self.stride
        return (n, n)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    backbone_lr_multiplier: float = 0.1
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    clip: float = 1.0
    steps: int = 3000
    batch: int = 8
    warmup_frac: float = 0.1
    drop_frac: float = 0.7
    seed: int = 0
    aug: str = "strong"
    max_frame_gap: int = 30
    lambda_cls: float = 1.0
    lambda_reg: float = 1.0
    vfl_alpha: float = 0.75
    vfl_gamma: float = 2.0
    overfit_single_pair: bool = False

    def validate(self) -> None:
        if self.aug not in AUG_MODES:
            raise ConfigError(f"aug must be one of {AUG_MODES}")
        if self.steps < 0 or self.batch < 1:
            raise ConfigError("steps must be >= 0 and batch >= 1")
        if not 0 <= self.warmup_frac <= 1 or not 0 <= self.drop_frac <= 1:
            raise ConfigError("warmup_frac and drop_frac must lie in [0, 1]")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


@dataclass
class TrackConfig:
    gamma: float = 0.49
    template_factor: float = 2.0
    search_factor: float = 4.0

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.template_factor <= 0 or self.search_factor <= 0:
            raise ConfigError("area factors must be positive")


@dataclass
class DataConfig:
    train_dirs: list = field(default_factory=list)
    test_dirs: list = field(default_factory=list)
    n_train_sequences: int = 40
    n_test_sequences: int = 20
    seq_length: int = 60
    frame_size: tuple = (128, 128)
    target_size: tuple = (14, 26)
    velocity: float = 1.5
    walk_sigma: float = 0.4
    n_distractors: int = 2
    distractor_similarity: float = 0.2
    scale_jitter: tuple = (0.8, 1.25)
    seed: int = 1234
    test_seed: int = 987654

    def validate(self) -> None:
        if self.n_train_sequences < 1 and not self.train_dirs:
            raise ConfigError("no training data configured")
        if self.seq_length < 2:
            raise ConfigError("sequences need at least two frames")
        lo, hi = self.target_size
        if not 0 < lo <= hi:
            raise ConfigError("target_size must be an increasing positive range")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.track.validate()
        self.data.validate()
        return self

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        sections = {"model": ModelConfig, "train": TrainConfig,
                    "track": TrackConfig, "data": DataConfig}
        unknown = set(doc) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {name: _build(kind, doc.get(name, {}), name) for name, kind in sections.items()}
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _build(kind, values: dict, section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name: f for f in dataclasses.fields(kind)}
    unknown = set(values) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    out = {}
    for key, val in values.items():
        default = names[key].default
        if isinstance(default, tuple) and isinstance(val, list):
            val = tuple(val)
        out[key] = val
    return kind(**out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def toy_config(**overrides) -> RunConfig:
    """The desk-scale preset used by the demos and the acceptance suite."""
    cfg = RunConfig(model=ModelConfig(stride=8, d_model=32, n_blocks=2, n_heads=2,
                                      template_size=32, search_size=64))
    for dotted, value in overrides.items():
        section, key = dotted.split("__", 1)
        setattr(getattr(cfg, section), key, value)
    return cfg.validate()


def overfit_config(**overrides) -> RunConfig:
    """500 steps on one fixed, centered pair; the memorization sanity check."""
    base = dict(train__steps=500, train__overfit_single_pair=True, train__aug="weak",
                train__lr=1e-3, train__drop_frac=0.6, train__backbone_lr_multiplier=0.1,
                data__n_train_sequences=1)
    base.update(overrides)
    return toy_config(**base)


def gradcheck_config() -> RunConfig:
    """Smallest full model: C=16, N=2, two heads, 32/64 crops at stride 16."""
    return RunConfig(model=ModelConfig(d_model=16, n_blocks=2, n_heads=2, stride=16,
                                       template_size=32, search_size=64,
                                       backbone_depth=1)).validate()
