"""Training loop and evaluation helpers."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .backbone import normalize_image
from .boxes import BBox
from .config import ModelConfig, RunConfig, TrackConfig
from .data import Sequence, load_sequence_dir, sample_training_pair, synth_corpus
from .heads import assign_targets, compute_losses, decode_box, stack_targets
from .metrics import MetricReport, evaluate
from .model import TrackerNet
from .optim import AdamW, lr_at
from .tracker import run_sequence

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "cls_loss", "reg_loss", "total", "lr")


def synth_kwargs(cfg: RunConfig) -> dict:
    d = cfg.data
    return dict(frame_size=tuple(d.frame_size), length=d.seq_length, target_size=tuple(d.target_size),
                velocity=d.velocity, walk_sigma=d.walk_sigma, n_distractors=d.n_distractors,
                distractor_similarity=d.distractor_similarity, scale_jitter=tuple(d.scale_jitter))


def training_corpus(cfg: RunConfig) -> list:
    if cfg.data.train_dirs:
        return [load_sequence_dir(p) for p in cfg.data.train_dirs]
    return synth_corpus(cfg.data.n_train_sequences, cfg.data.seed, **synth_kwargs(cfg))


def test_corpus(cfg: RunConfig) -> list:
    if cfg.data.test_dirs:
        return [load_sequence_dir(p) for p in cfg.data.test_dirs]
    return synth_corpus(cfg.data.n_test_sequences, cfg.data.test_seed, **synth_kwargs(cfg))


@dataclass
class Batch:
    template: np.ndarray
    search: np.ndarray
    targets: object
    boxes: list = field(default_factory=list)


def make_batch(pairs: list, mcfg: ModelConfig) -> Batch:
    template = np.stack([normalize_image(p.template, mcfg.norm_mean, mcfg.norm_std) for p in pairs])
    search = np.stack([normalize_image(p.search, mcfg.norm_mean, mcfg.norm_std) for p in pairs])
    targets = stack_targets([assign_targets(p.gt, mcfg.search_grid, mcfg.stride) for p in pairs])
    return Batch(template, search, targets, [p.gt for p in pairs])


def batch_loss(model: TrackerNet, batch: Batch, cfg: RunConfig, frozen=None):
    resp = model(batch.template, batch.search)
    tc, mc = cfg.train, cfg.model
    return compute_losses(resp, batch.targets, mc.search_grid, mc.stride, loss_mode=mc.loss_mode,
                          alpha=tc.vfl_alpha, gamma=tc.vfl_gamma, lambda_cls=tc.lambda_cls,
                          lambda_reg=tc.lambda_reg, frozen=frozen)


def make_optimizer(model: TrackerNet, cfg: RunConfig) -> AdamW:
    tc = cfg.train
    groups = model.parameter_groups()
    backbone = groups.pop("backbone", [])
    rest = [p for ps in groups.values() for p in ps]
    return AdamW([(backbone, tc.backbone_lr_multiplier), (rest, 1.0)], lr=tc.lr, betas=tc.betas,
                 eps=tc.eps, weight_decay=tc.weight_decay, clip_norm=tc.clip)


@dataclass
class TrainResult:
    model: TrackerNet
    config: RunConfig
    log: list
    fixed_batch: Optional[Batch] = None  # the single pair of an overfit run


def train(cfg: RunConfig, corpus: Optional[list] = None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Sample pairs -> forward -> losses -> backward -> AdamW, for ``train.steps`` steps."""
    cfg.validate()
    tc, mc = cfg.train, cfg.model
    corpus = corpus if corpus is not None else training_corpus(cfg)
    rng = np.random.default_rng(tc.seed)
    model = TrackerNet(mc)
    opt = make_optimizer(model, cfg)
    sizes = dict(template_size=mc.template_size, search_size=mc.search_size,
                 template_factor=cfg.track.template_factor, search_factor=cfg.track.search_factor,
                 max_gap=tc.max_frame_gap)
    fixed = None
    if tc.overfit_single_pair:
        fixed = make_batch([sample_training_pair(corpus[0], tc.aug, rng, **sizes)], mc)
    rows = []
    for step in range(tc.steps):
        if fixed is not None:
            batch = fixed
        else:
            pairs = [sample_training_pair(corpus[int(rng.integers(len(corpus)))], tc.aug, rng, **sizes)
                     for _ in range(tc.batch)]
            batch = make_batch(pairs, mc)
        lr = lr_at(step, tc.steps, tc.lr, tc.warmup_frac, tc.drop_frac)
        out = batch_loss(model, batch, cfg)
        total = out.total.item()
        if not np.isfinite(total):
            raise FloatingPointError(
                f"non-finite loss at step {step}: cls={out.cls.item()} reg={out.reg.item()}")
        opt.zero_grad()
        T.backward(out.total, opt.params)
        opt.step(lr)
        row = {"step": step, "cls_loss": out.cls.item(), "reg_loss": out.reg.item(),
               "total": total, "lr": lr}
        rows.append(row)
        if progress is not None:
            progress(row)
    return TrainResult(model, cfg, rows, fixed)


def write_loss_log(rows: list, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])
    return path


def track_corpus(model: TrackerNet, sequences: list, track_cfg: Optional[TrackConfig] = None) -> dict:
    return {seq.name: run_sequence(model, seq.frames, seq.box(0), track_cfg) for seq in sequences}


def evaluate_model(model: TrackerNet, sequences: list,
                   track_cfg: Optional[TrackConfig] = None) -> MetricReport:
    preds = track_corpus(model, sequences, track_cfg)
    return evaluate(preds, {s.name: s.gt for s in sequences})


def static_baseline(sequences: list) -> MetricReport:
    """Predict the first-frame box for every frame."""
    preds = {s.name: np.repeat(s.gt[:1], len(s), axis=0) for s in sequences}
    return evaluate(preds, {s.name: s.gt for s in sequences})


def decoded_argmax_box(model: TrackerNet, batch: Batch, index: int = 0) -> BBox:
    with T.no_grad():
        resp = model(batch.template[index:index + 1], batch.search[index:index + 1])
    scores = resp.r_cls.data.reshape(-1)
    idx = int(np.argmax(scores))
    return decode_box(idx, resp.r_reg.data.reshape(-1, 4), model.cfg.search_grid, model.cfg.stride)
