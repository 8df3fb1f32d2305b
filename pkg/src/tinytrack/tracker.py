"""Siamese inference loop: crop geometry, cosine-window prior, argmax decode."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates

from . import tensor as T
from .attention import record_attention
from .backbone import normalize_image
from .boxes import BBox
from .config import TrackConfig
from .fusion import TokenSet
from .heads import decode_box
from .model import TrackerNet
from .posenc import SEARCH, TEMPLATE
from .tensor import Tensor

MIN_TRACK_PX = 2.0


@dataclass(frozen=True)
class CropSpec:
    """Square frame window of side ``side`` centered at ``center``, resampled to ``out_size``.

    Frame point (X, Y) maps to crop point ((X - x0) / scale, (Y - y0) / scale)
    with ``x0 = cx - side / 2`` and ``scale = side / out_size``.
    """

    center: tuple
    side: float
    out_size: int
    area_factor: float

    @property
    def scale(self) -> float:
        return self.side / self.out_size

    @property
    def origin(self) -> tuple:
        return (self.center[0] - self.side / 2, self.center[1] - self.side / 2)

    def frame_to_crop_point(self, x: float, y: float) -> tuple:
        x0, y0 = self.origin
        return ((x - x0) / self.scale, (y - y0) / self.scale)

    def crop_to_frame_point(self, u: float, v: float) -> tuple:
        x0, y0 = self.origin
        return (x0 + u * self.scale, y0 + v * self.scale)

    def frame_to_crop(self, box: BBox) -> BBox:
        x, y = self.frame_to_crop_point(box.x, box.y)
        return BBox(x, y, box.w / self.scale, box.h / self.scale)

    def crop_to_frame(self, box: BBox) -> BBox:
        x, y = self.crop_to_frame_point(box.x, box.y)
        return BBox(x, y, box.w * self.scale, box.h * self.scale)


def crop_side(target: BBox, area_factor: float) -> float:
    return math.sqrt(target.w * target.h) * area_factor


def resample(frame: np.ndarray, spec: CropSpec) -> np.ndarray:
    """Bilinear sample of the crop window; outside the frame is the channel mean."""
    frame = np.asarray(frame)
    n = spec.out_size
    x0, y0 = spec.origin
    # pixel (r, c) covers [c, c+1); its center sits at c + 0.5 in both systems
    coords = x0 + (np.arange(n) + 0.5) * spec.scale - 0.5
    rows = y0 + (np.arange(n) + 0.5) * spec.scale - 0.5
    yy, xx = np.meshgrid(rows, coords, indexing="ij")
    src = frame.astype(np.float32)
    means = src.reshape(-1, src.shape[-1]).mean(axis=0)
    out = np.empty((n, n, src.shape[-1]), dtype=np.float32)
    for ch in range(src.shape[-1]):
        out[..., ch] = map_coordinates(src[..., ch], [yy, xx], order=1, mode="constant",
                                       cval=float(means[ch]), prefilter=False)
    return out


def make_crop(frame: np.ndarray, target: BBox, area_factor: float, out_size: int,
              center: Optional[tuple] = None, side: Optional[float] = None) -> tuple:
    """Square crop of side sqrt(w*h)*area_factor around the target, resized to out_size.

    ``center``/``side`` override the target-derived window (used for
    training-time translation and scale jitter).
    """
    if not (target.w > 0 and target.h > 0):
        raise ValueError("degenerate target box")
    spec = CropSpec(center if center is not None else target.center,
                    side if side is not None else crop_side(target, area_factor),
                    out_size, area_factor)
    return resample(frame, spec), spec


def hann_window(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))


def hanning_penalty(r_cls: np.ndarray, gamma: float, grid: Optional[tuple] = None) -> np.ndarray:
    """(1 - gamma) * r + gamma * h with h the 2-D Hann window over the score grid."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    r = np.asarray(r_cls, dtype=np.float64)
    if grid is None:
        if r.ndim != 2:
            raise ValueError("pass grid for flattened score maps")
        grid = r.shape
    window = np.outer(hann_window(grid[0]), hann_window(grid[1]))
    return (1.0 - gamma) * r + gamma * window.reshape(r.shape)


@dataclass
class TrackState:
    model: TrackerNet
    config: TrackConfig
    template: TokenSet
    box: BBox
    frame_size: tuple
    crop: Optional[CropSpec] = None
    frame_index: int = 0
    attention: list = field(default_factory=list)


def _prep(model: TrackerNet, crop: np.ndarray) -> np.ndarray:
    cfg = model.cfg
    return normalize_image(crop, cfg.norm_mean, cfg.norm_std)[None]


def init_track(frame: np.ndarray, gt: BBox, model: TrackerNet,
               config: Optional[TrackConfig] = None) -> TrackState:
    """Crop the template (factor 2) from the first frame and freeze its tokens."""
    config = config or TrackConfig()
    config.validate()
    crop, _ = make_crop(frame, gt, config.template_factor, model.cfg.template_size)
    with T.no_grad():
        z = model.embed_template(_prep(model, crop))
    data = z.tokens.data.copy()
    data.flags.writeable = False
    template = TokenSet(Tensor(data), z.grid, TEMPLATE)
    return TrackState(model, config, template, gt, tuple(np.asarray(frame).shape[:2]))


def clamp_to_frame(box: BBox, frame_size: tuple) -> BBox:
    fh, fw = frame_size
    w = float(np.clip(box.w, MIN_TRACK_PX, fw))
    h = float(np.clip(box.h, MIN_TRACK_PX, fh))
    cx = float(np.clip(box.x + box.w / 2, 0, fw))
    cy = float(np.clip(box.y + box.h / 2, 0, fh))
    return BBox.from_center(cx, cy, w, h)


def track_step(state: TrackState, frame: np.ndarray, record: bool = False) -> tuple:
    """Search around the previous box, pick the penalized argmax, decode and map back."""
    model, cfg = state.model, state.config
    if state.template.tokens.shape[-1] != model.cfg.d_model:
        raise ValueError("template tokens do not match the model width")
    crop, spec = make_crop(frame, state.box, cfg.search_factor, model.cfg.search_size)
    maps: list = []
    with T.no_grad():
        if record:
            with record_attention() as maps:
                resp = _forward(model, state.template, crop)
        else:
            resp = _forward(model, state.template, crop)
    grid = model.cfg.search_grid
    scores = resp.r_cls.data.reshape(-1)
    penalized = hanning_penalty(scores, cfg.gamma, grid)
    idx = int(np.argmax(penalized))
    box_crop = decode_box(idx, resp.r_reg.data.reshape(-1, 4), grid, model.cfg.stride)
    box = clamp_to_frame(spec.crop_to_frame(box_crop), state.frame_size)
    new_state = replace(state, box=box, crop=spec, frame_index=state.frame_index + 1,
                        attention=[m[0] for m in maps])
    return box, new_state


def _forward(model: TrackerNet, template: TokenSet, crop: np.ndarray):
    x = model.backbone(_prep(model, crop), SEARCH)
    return model.forward_tokens(template, x)


def run_sequence(model: TrackerNet, frames, init_box: BBox, config: Optional[TrackConfig] = None,
                 on_step=None) -> np.ndarray:
    """Track through ``frames``; row 0 is the initialization box. Returns [T, 4]."""
    state = init_track(frames[0], init_box, model, config)
    out = [init_box.as_array()]
    for i in range(1, len(frames)):
        box, state = track_step(state, frames[i], record=on_step is not None)
        if on_step is not None:
            on_step(i, state)
        out.append(box.as_array())
    return np.stack(out)
