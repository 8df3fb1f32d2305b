"""Axis-aligned boxes in (x, y, w, h) pixel form and overlap measures."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box needs positive size, got w={self.w} h={self.h}")

    @property
    def center(self) -> tuple:
        return (self.x + self.w / 2, self.y + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h

    def xyxy(self) -> tuple:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_xyxy(cls, x1, y1, x2, y2) -> "BBox":
        return cls(float(x1), float(y1), float(x2 - x1), float(y2 - y1))

    @classmethod
    def from_center(cls, cx, cy, w, h) -> "BBox":
        return cls(float(cx - w / 2), float(cy - h / 2), float(w), float(h))

    def serialize(self) -> str:
        return f"{self.x:.4f},{self.y:.4f},{self.w:.4f},{self.h:.4f}"

    @classmethod
    def parse(cls, text: str) -> "BBox":
        parts = text.replace("\t", ",").replace(" ", ",").split(",")
        vals = [float(p) for p in parts if p != ""]
        if len(vals) != 4:
            raise ValueError(f"expected 4 numbers, got {len(vals)}")
        return cls(*vals)


def iou(b1: BBox, b2: BBox) -> float:
    ax1, ay1, ax2, ay2 = b1.xyxy()
    bx1, by1, bx2, by2 = b2.xyxy()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    return inter / (b1.area + b2.area - inter)


def giou(b1: BBox, b2: BBox) -> float:
    ax1, ay1, ax2, ay2 = b1.xyxy()
    bx1, by1, bx2, by2 = b2.xyxy()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = b1.area + b2.area - inter
    enclosing = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    return inter / union - (enclosing - union) / enclosing


def iou_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of two [..., 4] arrays of (x, y, w, h)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.clip(np.minimum(a[..., 0] + a[..., 2], b[..., 0] + b[..., 2])
                 - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 1] + a[..., 3], b[..., 1] + b[..., 3])
                 - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def center_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ca = a[..., :2] + a[..., 2:] / 2
    cb = b[..., :2] + b[..., 2:] / 2
    return np.sqrt(((ca - cb) ** 2).sum(axis=-1))
