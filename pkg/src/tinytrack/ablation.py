"""Paired runs that differ along a single configuration axis."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Optional

from .config import ConfigError, RunConfig
from .metrics import MetricReport
from .model import TrackerNet
from .nn import count_parameters
from .train import evaluate_model, test_corpus, train, training_corpus

# axis -> (config section, field, alternative value); the baseline is cfg's own value
AXES = {
    "fusion": ("model", "fusion_mode", "cross"),
    "pe": ("model", "pe_mode", "sine"),
    "loss": ("model", "loss_mode", "bce"),
    "aug": ("train", "aug", "weak"),
    "hann": ("track", "gamma", 0.0),
}
INFERENCE_ONLY = {"hann"}


@dataclass
class AblationRow:
    label: str
    n_parameters: int
    report: MetricReport

    @property
    def suc(self) -> float:
        return self.report.suc


@dataclass
class AblationResult:
    axis: str
    rows: list

    @property
    def delta(self) -> float:
        """SUC of the variant minus SUC of the baseline."""
        return self.rows[1].suc - self.rows[0].suc

    def table(self) -> str:
        lines = [f"axis: {self.axis}", f"{'variant':<22}{'params':>9}{'SUC':>8}{'PRE':>8}{'NPRE':>8}"]
        for r in self.rows:
            rep = r.report
            lines.append(f"{r.label:<22}{r.n_parameters:>9d}{rep.suc:>8.3f}{rep.pre:>8.3f}{rep.npre:>8.3f}")
        lines.append(f"delta SUC (variant - baseline): {self.delta:+.3f}")
        return "\n".join(lines)


def variant_configs(cfg: RunConfig, axis: str) -> list:
    """[(label, config)] for the baseline and the single-axis variant."""
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    section, key, alt = AXES[axis]
    base_val = getattr(getattr(cfg, section), key)
    if base_val == alt:
        raise ConfigError(f"baseline already has {section}.{key}={alt!r}")
    variant = copy.deepcopy(cfg)
    setattr(getattr(variant, section), key, alt)
    variant.validate()
    return [(f"{key}={base_val}", copy.deepcopy(cfg)), (f"{key}={alt}", variant)]


def compare(configs: list, corpus: Optional[list] = None, test: Optional[list] = None,
            models: Optional[dict] = None, progress: Optional[Callable] = None) -> list:
    """Train (or reuse from ``models``) and evaluate each (label, config) pair.

    Configs whose model and training sections match share one trained model,
    so inference-only differences need no retraining.
    """
    models = {} if models is None else models
    rows = []
    for label, cfg in configs:
        key = _train_key(cfg)
        if key not in models:
            data = corpus if corpus is not None else training_corpus(cfg)
            models[key] = train(cfg, data, progress).model
        model: TrackerNet = models[key]
        seqs = test if test is not None else test_corpus(cfg)
        rows.append(AblationRow(label, count_parameters(model), evaluate_model(model, seqs, cfg.track)))
    return rows


def _train_key(cfg: RunConfig) -> str:
    doc = cfg.to_dict()
    doc.pop("track")
    return repr(doc)


def ablate(cfg: RunConfig, axis: str, corpus: Optional[list] = None, test: Optional[list] = None,
           models: Optional[dict] = None, progress: Optional[Callable] = None) -> AblationResult:
    return AblationResult(axis, compare(variant_configs(cfg, axis), corpus, test, models, progress))
