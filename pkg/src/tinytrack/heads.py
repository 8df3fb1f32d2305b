"""Prediction heads, box (de)coding, target assignment and the training losses.

Boxes inside the losses are normalized ``(x1, y1, x2, y2)`` in units of the
search-crop side.  The regression branch predicts, per token, its distances
to the four box edges (left, top, right, bottom), also in crop-side units.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .boxes import BBox, iou_arrays
from .nn import MLP, Module
from .tensor import DimensionError, Tensor

P_CLAMP = 1e-6
VFL_ALPHA = 0.75
VFL_GAMMA = 2.0
MIN_BOX_PX = 1.0


@dataclass
class ResponseMap:
    r_cls: Tensor  # [B, L, 1], sigmoid scores
    r_reg: Tensor  # [B, L, 4], normalized (l, t, r, b)


class Head(Module):
    """Two independent three-layer perceptrons: classification and box regression."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.d_model = d_model
        self.cls = MLP([d_model, d_model, d_model, 1], rng)
        self.reg = MLP([d_model, d_model, d_model, 4], rng)

    def __call__(self, feats: Tensor) -> ResponseMap:
        if feats.shape[-1] != self.d_model:
            raise DimensionError(f"head expects {self.d_model} channels, got {feats.shape[-1]}")
        return ResponseMap(T.sigmoid(self.cls(feats)), T.sigmoid(self.reg(feats)))


def head_forward(feats: Tensor, head: Head) -> ResponseMap:
    return head(feats)


@functools.lru_cache(maxsize=64)
def _centers(grid: tuple, stride: int) -> np.ndarray:
    gh, gw = grid
    rows, cols = np.divmod(np.arange(gh * gw), gw)
    out = np.stack([(cols + 0.5) * stride, (rows + 0.5) * stride], axis=1).astype(np.float64)
    out.flags.writeable = False
    return out


def token_centers(grid: tuple, stride: int) -> np.ndarray:
    """Pixel centers (cx, cy) of every token, row-major, [H*W, 2]."""
    return _centers(tuple(grid), int(stride))


def decode_box(index: int, r_reg: np.ndarray, grid: tuple, stride: int) -> BBox:
    """Box in crop pixels predicted at token ``index``; sizes floor at 1 px."""
    crop = grid[1] * stride, grid[0] * stride
    reg = np.asarray(r_reg, dtype=np.float64).reshape(-1, 4)
    if not 0 <= index < reg.shape[0]:
        raise IndexError(f"location {index} out of range for {reg.shape[0]} tokens")
    l, t, r, b = reg[index]
    cx, cy = token_centers(grid, stride)[index]
    w = max((l + r) * crop[0], MIN_BOX_PX)
    h = max((t + b) * crop[1], MIN_BOX_PX)
    return BBox(float(cx - l * crop[0]), float(cy - t * crop[1]), float(w), float(h))


def decode_boxes(r_reg: np.ndarray, grid: tuple, stride: int) -> np.ndarray:
    """Vectorized ``decode_box`` over all tokens: [..., L, 4] (x, y, w, h) pixels."""
    reg = np.asarray(r_reg, dtype=np.float64)
    size = np.array([grid[1] * stride, grid[0] * stride], dtype=np.float64)
    c = token_centers(grid, stride)
    xy = c - reg[..., :2] * size
    wh = np.maximum((reg[..., :2] + reg[..., 2:]) * size, MIN_BOX_PX)
    return np.concatenate([xy, wh], axis=-1)


def encode_box(gt: BBox, index: int, grid: tuple, stride: int) -> np.ndarray:
    """Edge distances (l, t, r, b) from token ``index`` to ``gt``, crop-normalized."""
    sx, sy = grid[1] * stride, grid[0] * stride
    cx, cy = token_centers(grid, stride)[index]
    x1, y1, x2, y2 = gt.xyxy()
    return np.array([(cx - x1) / sx, (cy - y1) / sy, (x2 - cx) / sx, (y2 - cy) / sy])


def predicted_boxes(r_reg: Tensor, grid: tuple, stride: int) -> Tensor:
    """Differentiable normalized (x1, y1, x2, y2) at every token, [..., L, 4]."""
    c = token_centers(grid, stride) / np.array([grid[1] * stride, grid[0] * stride])
    signs = np.array([-1.0, -1.0, 1.0, 1.0])
    return r_reg * signs.astype(r_reg.dtype) + np.tile(c, (1, 2)).astype(r_reg.dtype)


@dataclass
class AssignmentTarget:
    positive: np.ndarray  # bool [..., L]
    gt_xyxy: np.ndarray  # normalized [..., 4]
    gt: list = field(default_factory=list)
    q: Optional[np.ndarray] = None  # filled at loss time

    @property
    def num_positive(self) -> np.ndarray:
        return self.positive.sum(axis=-1)


def assign_targets(gt: BBox, grid: tuple, stride: int) -> AssignmentTarget:
    """Positives are tokens whose centers lie in ``gt`` (half-open on the far edges).

    A box small enough to fall between centers still gets its nearest token;
    a box entirely outside the crop gets no positives.
    """
    sx, sy = grid[1] * stride, grid[0] * stride
    c = token_centers(grid, stride)
    x1, y1, x2, y2 = gt.xyxy()
    pos = (c[:, 0] >= x1) & (c[:, 0] < x2) & (c[:, 1] >= y1) & (c[:, 1] < y2)
    if not pos.any():
        overlaps = x2 > 0 and y2 > 0 and x1 < sx and y1 < sy
        if overlaps:
            gx, gy = gt.center
            pos[int(np.argmin((c[:, 0] - gx) ** 2 + (c[:, 1] - gy) ** 2))] = True
    gt_norm = np.array([x1 / sx, y1 / sy, x2 / sx, y2 / sy])
    return AssignmentTarget(pos, gt_norm, [gt])


def stack_targets(targets: Sequence[AssignmentTarget]) -> AssignmentTarget:
    return AssignmentTarget(np.stack([t.positive for t in targets]),
                            np.stack([t.gt_xyxy for t in targets]),
                            [g for t in targets for g in t.gt])


def _as_prob(p) -> Tensor:
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    return T.clip(p, P_CLAMP, 1.0 - P_CLAMP)


def varifocal_loss(p, q, alpha: float = VFL_ALPHA, gamma: float = VFL_GAMMA) -> Tensor:
    """Elementwise varifocal loss.

    Positives (q > 0): -q (q log p + (1 - q) log(1 - p)).
    Negatives (q = 0): -alpha p^gamma log(1 - p).
    ``q`` is a constant target; ``p`` is clamped to [1e-6, 1 - 1e-6].
    """
    p = _as_prob(p)
    q = np.asarray(q.data if isinstance(q, Tensor) else q, dtype=p.dtype)
    pos = (q > 0).astype(p.dtype)
    log_p = T.log(p)
    log_1mp = T.log(1.0 - p)
    pos_term = (log_p * q + log_1mp * (1.0 - q)) * (-q)
    neg_term = T.power(p, gamma) * log_1mp * (-alpha)
    return pos_term * pos + neg_term * (1.0 - pos)


def bce(p, labels) -> Tensor:
    p = _as_prob(p)
    y = np.asarray(labels, dtype=p.dtype)
    return -(T.log(p) * y + T.log(1.0 - p) * (1.0 - y))


def bce_loss_variant(p, labels) -> Tensor:
    """Mean binary cross-entropy against hard 0/1 labels over the last axis."""
    return bce(p, labels).mean(axis=-1)


def giou_tensor(pred: Tensor, gt_xyxy: np.ndarray) -> Tensor:
    """GIoU between predicted [..., L, 4] and per-sample ground truth [..., 4]."""
    g = np.asarray(gt_xyxy, dtype=pred.dtype)[..., None, :]
    px1, py1, px2, py2 = (pred[..., i] for i in range(4))
    gx1, gy1, gx2, gy2 = (g[..., i] for i in range(4))
    iw = T.maximum(T.minimum(px2, gx2) - T.maximum(px1, gx1), 0.0)
    ih = T.maximum(T.minimum(py2, gy2) - T.maximum(py1, gy1), 0.0)
    inter = iw * ih
    area_p = (px2 - px1) * (py2 - py1)
    area_g = (gx2 - gx1) * (gy2 - gy1)
    union = area_p + area_g - inter
    enc = (T.maximum(px2, gx2) - T.minimum(px1, gx1)) * (T.maximum(py2, gy2) - T.minimum(py1, gy1))
    return inter / union - (enc - union) / enc


def current_iou(pred_xyxy: np.ndarray, gt_xyxy: np.ndarray) -> np.ndarray:
    """IoU of every predicted box with its sample's ground truth (no gradient)."""
    p = np.asarray(pred_xyxy, dtype=np.float64)
    g = np.asarray(gt_xyxy, dtype=np.float64)[..., None, :]
    pb = np.concatenate([p[..., :2], p[..., 2:] - p[..., :2]], axis=-1)
    gb = np.concatenate([g[..., :2], g[..., 2:] - g[..., :2]], axis=-1)
    pb[..., 2:] = np.maximum(pb[..., 2:], 1e-9)
    return iou_arrays(pb, np.broadcast_to(gb, pb.shape))


def _scores(r_cls: Tensor) -> Tensor:
    return r_cls[..., 0] if r_cls.shape[-1] == 1 and r_cls.ndim >= 2 else r_cls


def classification_loss(r_cls: Tensor, assignment: AssignmentTarget, pred_xyxy,
                        alpha: float = VFL_ALPHA, gamma: float = VFL_GAMMA,
                        q: Optional[np.ndarray] = None) -> Tensor:
    """Varifocal loss against the IoU-aware target, normalized by positive count.

    The target ``q`` is the current IoU of each positive location's decoded box
    with the ground truth, computed without gradient; pass ``q`` to reuse a
    frozen value.
    """
    p = _scores(r_cls)
    if q is None:
        pred = pred_xyxy.data if isinstance(pred_xyxy, Tensor) else pred_xyxy
        q = current_iou(pred, assignment.gt_xyxy) * assignment.positive
    assignment.q = q
    per_loc = varifocal_loss(p, q, alpha, gamma)
    norm = np.maximum(assignment.num_positive, 1).astype(p.dtype)
    return (per_loc.sum(axis=-1) / norm).mean()


def regression_loss(r_cls: Tensor, pred_xyxy: Tensor, assignment: AssignmentTarget,
                    weight: Optional[np.ndarray] = None) -> Tensor:
    """sum_pos p * (1 - GIoU) / max(#pos, 1); ``p`` is a detached weight."""
    p = _scores(r_cls)
    if weight is None:
        weight = p.data * assignment.positive
    weight = np.asarray(weight, dtype=pred_xyxy.dtype)
    loss = (1.0 - giou_tensor(pred_xyxy, assignment.gt_xyxy)) * weight
    norm = np.maximum(assignment.num_positive, 1).astype(pred_xyxy.dtype)
    return (loss.sum(axis=-1) / norm).mean()


@dataclass
class LossOutput:
    total: Tensor
    cls: Tensor
    reg: Tensor
    q: np.ndarray
    weight: np.ndarray


def compute_losses(resp: ResponseMap, assignment: AssignmentTarget, grid: tuple, stride: int,
                   loss_mode: str = "vfl", alpha: float = VFL_ALPHA, gamma: float = VFL_GAMMA,
                   lambda_cls: float = 1.0, lambda_reg: float = 1.0,
                   frozen: Optional[LossOutput] = None) -> LossOutput:
    """Total = lambda_cls * L_cls + lambda_reg * L_reg.

    ``frozen`` reuses the stop-gradient quantities (IoU targets and GIoU
    weights) of an earlier evaluation, which makes the loss a fixed smooth
    function of the parameters for finite-difference checks.
    """
    pred = predicted_boxes(resp.r_reg, grid, stride)
    p = _scores(resp.r_cls)
    q = frozen.q if frozen is not None else None
    weight = frozen.weight if frozen is not None else p.data * assignment.positive
    if loss_mode == "vfl":
        cls = classification_loss(resp.r_cls, assignment, pred, alpha, gamma, q=q)
        q = assignment.q
    elif loss_mode == "bce":
        cls = bce_loss_variant(p, assignment.positive).mean()
        q = assignment.positive.astype(np.float64)
    else:
        raise ValueError(f"unknown loss mode {loss_mode!r}")
    reg = regression_loss(resp.r_cls, pred, assignment, weight)
    total = cls * lambda_cls + reg * lambda_reg
    return LossOutput(total, cls, reg, q, weight)
