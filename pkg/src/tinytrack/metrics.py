"""One-pass evaluation metrics.

Conventions (fixed):
  success(t)   = fraction of frames with IoU >= t, t on a 21-point grid over [0, 1]
  SUC          = mean of success(t) over that grid
  PRE          = fraction of frames with center error <= 20 px
  NPRE         = mean over t in {0, 0.01, ..., 0.5} of the fraction with
                 box-normalized center error <= t
  AO / SR@t    = mean IoU / fraction of frames with IoU > t (strict)
Dataset-level SUC/PRE/NPRE average the per-sequence values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .boxes import center_distance, iou_arrays

# k / 20 rather than linspace, whose k * 0.05 misses values such as 0.15 by an ulp
SUCCESS_THRESHOLDS = np.arange(21) / 20
NORM_PRECISION_THRESHOLDS = np.arange(51) / 100
PRECISION_PX = 20.0


def _nonempty(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{what} list is empty")
    return arr


def success_curve(ious, thresholds=SUCCESS_THRESHOLDS) -> np.ndarray:
    ious = _nonempty(ious, "IoU")
    return (ious[None, :] >= np.asarray(thresholds)[:, None]).mean(axis=1)


def success_auc(ious) -> float:
    """Mean of the success curve, computed as one hit count over the whole grid."""
    ious = _nonempty(ious, "IoU")
    hits = int((ious[None, :] >= SUCCESS_THRESHOLDS[:, None]).sum())
    return hits / (len(SUCCESS_THRESHOLDS) * ious.size)


def precision(center_errors, threshold: float = PRECISION_PX) -> float:
    err = _nonempty(center_errors, "center error")
    return float((err <= threshold).mean())


def normalized_center_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Center offsets divided elementwise by the ground-truth (w, h), then L2 norm."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    d = (pred[:, :2] + pred[:, 2:] / 2) - (gt[:, :2] + gt[:, 2:] / 2)
    return np.sqrt(((d / gt[:, 2:]) ** 2).sum(axis=1))


def normalized_precision(norm_errors, thresholds=NORM_PRECISION_THRESHOLDS) -> float:
    err = _nonempty(norm_errors, "normalized error")
    thresholds = np.asarray(thresholds)
    hits = int((err[None, :] <= thresholds[:, None]).sum())
    return hits / (thresholds.size * err.size)


def average_overlap(per_sequence_ious) -> tuple:
    """(mAO, mSR@0.5, mSR@0.75), each a mean over sequences."""
    seqs = [_nonempty(s, "IoU") for s in per_sequence_ious]
    if not seqs:
        raise ValueError("no sequences")
    # plain left-to-right sums keep the reduction order fixed
    n = len(seqs)
    ao = sum(sum(float(v) for v in s) / s.size for s in seqs) / n
    sr50 = sum(int((s > 0.5).sum()) / s.size for s in seqs) / n
    sr75 = sum(int((s > 0.75).sum()) / s.size for s in seqs) / n
    return ao, sr50, sr75


@dataclass
class MetricReport:
    suc: float
    pre: float
    npre: float
    mao: float
    msr50: float
    msr75: float
    per_sequence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"suc": self.suc, "pre": self.pre, "npre": self.npre, "mao": self.mao,
                "msr50": self.msr50, "msr75": self.msr75, "per_sequence": self.per_sequence}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [("sequence", "SUC", "PRE", "NPRE", "AO")]
        for name in sorted(self.per_sequence):
            r = self.per_sequence[name]
            rows.append((name, f"{r['suc']:.3f}", f"{r['pre']:.3f}", f"{r['npre']:.3f}", f"{r['ao']:.3f}"))
        rows.append(("ALL", f"{self.suc:.3f}", f"{self.pre:.3f}", f"{self.npre:.3f}", f"{self.mao:.3f}"))
        width = max(len(r[0]) for r in rows)
        lines = [f"{r[0]:<{width}}  " + "  ".join(f"{c:>6}" for c in r[1:]) for r in rows]
        lines.append(f"mSR50={self.msr50:.3f}  mSR75={self.msr75:.3f}")
        return "\n".join(lines)


def evaluate(predictions: dict, ground_truth: dict) -> MetricReport:
    """Score ``name -> [T, 4]`` predictions against ground truth of the same shapes."""
    if not predictions:
        raise ValueError("no sequences to evaluate")
    per, all_ious = {}, []
    for name in sorted(predictions):
        pred = np.asarray(predictions[name], dtype=np.float64).reshape(-1, 4)
        gt = np.asarray(ground_truth[name], dtype=np.float64).reshape(-1, 4)
        if len(pred) != len(gt):
            raise ValueError(f"{name}: {len(pred)} predictions for {len(gt)} frames")
        ious = iou_arrays(pred, gt)
        all_ious.append(ious)
        per[name] = {
            "suc": success_auc(ious),
            "pre": precision(center_distance(pred, gt)),
            "npre": normalized_precision(normalized_center_errors(pred, gt)),
            "ao": float(ious.mean()),
        }
    mao, msr50, msr75 = average_overlap(all_ious)
    return MetricReport(
        suc=float(np.mean([r["suc"] for r in per.values()])),
        pre=float(np.mean([r["pre"] for r in per.values()])),
        npre=float(np.mean([r["npre"] for r in per.values()])),
        mao=mao, msr50=msr50, msr75=msr75, per_sequence=per)
