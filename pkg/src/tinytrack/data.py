"""Synthetic sequences, benchmark-layout sequence directories, and training pairs."""
from __future__ import annotations

import colorsys
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy.ndimage import zoom

from .boxes import BBox
from .tracker import CropSpec, crop_side, make_crop

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")
GT_FILE = "groundtruth.txt"


@dataclass
class Sequence:
    frames: list  # uint8 [H, W, 3] arrays
    gt: np.ndarray  # [T, 4] (x, y, w, h)
    name: str = "seq"

    def __post_init__(self):
        self.gt = np.asarray(self.gt, dtype=np.float64).reshape(-1, 4)
        if len(self.frames) != len(self.gt):
            raise ValueError(f"{self.name}: {len(self.frames)} frames but {len(self.gt)} boxes")
        shapes = {np.asarray(f).shape for f in self.frames}
        if len(shapes) > 1:
            raise ValueError(f"{self.name}: frame sizes differ within the sequence")

    def __len__(self) -> int:
        return len(self.frames)

    def box(self, i: int) -> BBox:
        return BBox(*map(float, self.gt[i]))


@dataclass
class SynthConfig:
    frame_size: tuple = (128, 128)
    length: int = 60
    target_size: tuple = (14, 26)
    velocity: float = 1.5
    walk_sigma: float = 0.4
    max_speed: float = 4.0
    n_distractors: int = 2
    distractor_similarity: float = 0.2
    scale_jitter: tuple = (0.8, 1.25)
    scale_walk: float = 0.02
    texture: bool = True
    seed: int = 0
    name: Optional[str] = None


def _vivid(rng: np.random.Generator) -> np.ndarray:
    r, g, b = colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(0.7, 1.0), rng.uniform(0.75, 1.0))
    return np.array([r, g, b]) * 255.0


def _background(rng: np.random.Generator, h: int, w: int, texture: bool) -> np.ndarray:
    base = rng.uniform(70, 150, size=(5, 5, 3))
    field_ = zoom(base, (h / 5, w / 5, 1), order=1)[:h, :w]
    if texture:
        field_ = field_ + rng.normal(0, 8, size=(h, w, 3))
    return field_


def _paint(img: np.ndarray, box: tuple, color: np.ndarray, inner: Optional[np.ndarray]) -> None:
    x, y, w, h = box
    img[y:y + h, x:x + w] = color
    if inner is not None and w >= 4 and h >= 4:
        iw, ih = max(w // 2, 1), max(h // 2, 1)
        ix, iy = x + (w - iw) // 2, y + (h - ih) // 2
        img[iy:iy + ih, ix:ix + iw] = inner


class _Mover:
    def __init__(self, rng, cfg: SynthConfig, base_wh, speed):
        fh, fw = cfg.frame_size
        self.base = np.asarray(base_wh, dtype=np.float64)
        self.scale = 1.0
        w, h = self.base
        self.pos = np.array([rng.uniform(w / 2, fw - w / 2), rng.uniform(h / 2, fh - h / 2)])
        ang = rng.uniform(0, 2 * math.pi)
        self.vel = speed * np.array([math.cos(ang), math.sin(ang)])

    def size(self) -> np.ndarray:
        return np.maximum(np.round(self.base * self.scale), 2)

    def box(self) -> tuple:
        w, h = self.size()
        return (int(round(self.pos[0] - w / 2)), int(round(self.pos[1] - h / 2)), int(w), int(h))

    def advance(self, rng, cfg: SynthConfig) -> None:
        fh, fw = cfg.frame_size
        if cfg.walk_sigma > 0:
            self.vel = self.vel + rng.normal(0, cfg.walk_sigma, 2)
            speed = np.linalg.norm(self.vel)
            if speed > cfg.max_speed:
                self.vel *= cfg.max_speed / speed
        lo, hi = cfg.scale_jitter
        if hi > lo and cfg.scale_walk > 0:
            self.scale = float(np.clip(self.scale * math.exp(rng.normal(0, cfg.scale_walk)), lo, hi))
        self.pos = self.pos + self.vel
        w, h = self.size()
        for axis, (half, limit) in enumerate(((w / 2, fw), (h / 2, fh))):
            if self.pos[axis] < half:
                self.pos[axis] = 2 * half - self.pos[axis]
                self.vel[axis] = abs(self.vel[axis])
            if self.pos[axis] > limit - half:
                self.pos[axis] = 2 * (limit - half) - self.pos[axis]
                self.vel[axis] = -abs(self.vel[axis])
            self.pos[axis] = float(np.clip(self.pos[axis], half, limit - half))


def generate_sequence(cfg: SynthConfig) -> Sequence:
    """A textured two-tone rectangle moving over a smooth background among distractors.

    The ground truth is the exact pixel extent of the painted target, which
    stays inside the frame (walls reflect).  Identical seeds give identical frames.
    """
    fh, fw = cfg.frame_size
    lo, hi = cfg.target_size
    if hi * cfg.scale_jitter[1] > min(fh, fw):
        raise ValueError("target larger than frame")
    rng = np.random.default_rng(cfg.seed)
    bg = _background(rng, fh, fw, cfg.texture)
    color = _vivid(rng)
    inner = 255.0 - color if cfg.texture else None
    target = _Mover(rng, cfg, rng.uniform(lo, hi, 2), cfg.velocity)
    distractors = []
    for _ in range(cfg.n_distractors):
        mix = cfg.distractor_similarity
        dcolor = mix * color + (1 - mix) * _vivid(rng)
        dinner = mix * inner + (1 - mix) * _vivid(rng) if inner is not None else None
        mover = _Mover(rng, cfg, rng.uniform(lo, hi, 2), cfg.velocity)
        distractors.append((mover, dcolor, dinner))
    frames, boxes = [], []
    for t in range(cfg.length):
        if t:
            target.advance(rng, cfg)
            for mover, _, _ in distractors:
                mover.advance(rng, cfg)
        img = bg.copy()
        for mover, dcolor, dinner in distractors:
            _paint(img, mover.box(), dcolor, dinner)
        tb = target.box()
        _paint(img, tb, color, inner)
        frames.append(np.clip(np.round(img), 0, 255).astype(np.uint8))
        boxes.append(tb)
    return Sequence(frames, np.array(boxes, dtype=np.float64), cfg.name or f"synth_{cfg.seed}")


def synth_corpus(n: int, seed: int, **kwargs) -> list:
    """``n`` sequences with seeds derived from ``seed``."""
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=n)
    return [generate_sequence(SynthConfig(seed=int(s), name=f"synth_{seed}_{i:03d}", **kwargs))
            for i, s in enumerate(seeds)]


# -- benchmark-layout directories -------------------------------------------------

def _natural_key(path: Path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", path.name)]


def read_boxes(path, expected: Optional[int] = None) -> np.ndarray:
    """Parse one ``x,y,w,h`` line per frame; blank trailing lines are ignored."""
    text = Path(path).read_text().replace("\r\n", "\n").replace("\r", "\n")
    lines = text.split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    boxes = []
    for lineno, line in enumerate(lines, start=1):
        parts = [p for p in re.split(r"[,\s]+", line.strip()) if p]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            vals = []
        if len(vals) != 4:
            raise ValueError(f"{path}:{lineno}: malformed box line {line!r}")
        boxes.append(vals)
    arr = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    if expected is not None and len(arr) != expected:
        raise ValueError(f"{path}: {len(arr)} boxes for {expected} frames")
    return arr


def load_sequence_dir(path) -> Sequence:
    path = Path(path)
    gt_path = path / GT_FILE
    if not gt_path.exists():
        raise FileNotFoundError(f"{gt_path} is missing")
    images = sorted((p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTS), key=_natural_key)
    if not images:
        raise ValueError(f"{path}: no image files")
    gt = read_boxes(gt_path, expected=len(images))
    frames = [np.asarray(Image.open(p).convert("RGB")) for p in images]
    return Sequence(frames, gt, path.name)


def save_sequence_dir(seq: Sequence, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        Image.fromarray(np.asarray(frame, dtype=np.uint8)).save(path / f"{i:08d}.png")
    lines = [",".join(f"{v:g}" for v in row) for row in seq.gt]
    (path / GT_FILE).write_text("\n".join(lines) + "\n")
    return path


def write_results(path, boxes) -> Path:
    """One ``frame,x,y,w,h`` line per frame, frame numbers starting at 1."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    path = Path(path)
    lines = [f"{i}," + ",".join(repr(float(v)) for v in row) for i, row in enumerate(boxes, start=1)]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def read_results(path) -> np.ndarray:
    """Inverse of ``write_results``; rows come back ordered by frame number."""
    rows = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        try:
            frame, vals = int(parts[0]), [float(p) for p in parts[1:]]
        except ValueError:
            vals = []
        if len(vals) != 4:
            raise ValueError(f"{path}:{lineno}: expected frame,x,y,w,h, got {line!r}")
        if frame in rows:
            raise ValueError(f"{path}:{lineno}: frame {frame} listed twice")
        rows[frame] = vals
    frames = sorted(rows)
    if frames != list(range(1, len(frames) + 1)):
        raise ValueError(f"{path}: frame numbers must run 1..N without gaps")
    return np.array([rows[f] for f in frames], dtype=np.float64).reshape(-1, 4)


# -- training pairs ---------------------------------------------------------------------

SEARCH_SHIFT = 0.25
SEARCH_SCALE = (0.75, 1.33)


@dataclass
class TrainingPair:
    template: np.ndarray  # float crop, 0..255
    search: np.ndarray
    gt: BBox  # target in search-crop pixels
    search_spec: CropSpec = field(repr=False)
    frame_gt: BBox = field(repr=False)


def sample_training_pair(seq: Sequence, aug: str, rng: np.random.Generator,
                         template_size: int = 32, search_size: int = 64,
                         template_factor: float = 2.0, search_factor: float = 4.0,
                         max_gap: int = 30, frames: Optional[tuple] = None) -> TrainingPair:
    """Template from one frame, search region from another (nearby) frame.

    ``strong`` shifts the target center uniformly within +-25% of the search
    crop and rescales the crop log-uniformly in [0.75, 1.33]; ``weak`` keeps
    the target centered at its nominal scale.
    """
    if aug not in ("strong", "weak"):
        raise ValueError(f"unknown augmentation mode {aug!r}")
    if frames is None:
        i = int(rng.integers(0, len(seq)))
        lo, hi = max(0, i - max_gap), min(len(seq) - 1, i + max_gap)
        j = int(rng.integers(lo, hi + 1))
    else:
        i, j = frames
    tbox, sbox = seq.box(i), seq.box(j)
    template, _ = make_crop(seq.frames[i], tbox, template_factor, template_size)
    side = crop_side(sbox, search_factor)
    cx, cy = sbox.center
    if aug == "strong":
        side *= math.exp(rng.uniform(math.log(SEARCH_SCALE[0]), math.log(SEARCH_SCALE[1])))
        dx, dy = rng.uniform(-SEARCH_SHIFT, SEARCH_SHIFT, 2)
        cx, cy = cx - dx * side, cy - dy * side
    search, spec = make_crop(seq.frames[j], sbox, search_factor, search_size,
                             center=(cx, cy), side=side)
    return TrainingPair(template, search, spec.frame_to_crop(sbox), spec, sbox)
