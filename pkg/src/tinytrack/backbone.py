"""Toy patch-embedding backbone standing in for a hierarchical vision transformer.

Any object with ``__call__(images, kind) -> TokenSet`` and the same stride can
replace it; the fusion stage only sees token grids.
"""
from __future__ import annotations

import numpy as np

from .attention import AttentionConfig
from .fusion import EncoderBlock, TokenSet
from .nn import Linear, Module
from .posenc import sinusoidal_pe
from .tensor import Tensor, get_default_dtype


def normalize_image(raw, mean, std) -> np.ndarray:
    """Map 0..255 pixels (any numeric dtype) to standardized float channels."""
    arr = np.asarray(raw)
    if arr.shape[-1] != 3:
        raise ValueError(f"expected 3 channels, got shape {arr.shape}")
    x = arr.astype(np.float64) / 255.0
    x = (x - np.asarray(mean)) / np.asarray(std)
    return x.astype(get_default_dtype())


def patchify(images: np.ndarray, stride: int) -> np.ndarray:
    """[B, H, W, 3] -> [B, (H/s)(W/s), s*s*3], patches in row-major order."""
    b, h, w, c = images.shape
    if h % stride or w % stride:
        raise ValueError(f"crop {h}x{w} is not divisible by stride {stride}")
    gh, gw = h // stride, w // stride
    x = images.reshape(b, gh, stride, gw, stride, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, gh * gw, stride * stride * c)


class PatchBackbone(Module):
    """Non-overlapping patch embedding + fixed 2-D sinusoid + plain pre-norm blocks."""

    def __init__(self, d_model: int, stride: int, depth: int, n_heads: int,
                 rng: np.random.Generator):
        self.d_model = d_model
        self.stride = stride
        self.embed = Linear(stride * stride * 3, d_model, rng)
        cfg = AttentionConfig(d_model, n_heads)
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(depth)]

    def embed_patches(self, images: np.ndarray) -> Tensor:
        images = np.asarray(images, dtype=get_default_dtype())
        if images.ndim == 3:
            images = images[None]
        return self.embed(Tensor(patchify(images, self.stride)))

    def __call__(self, images: np.ndarray, kind: str) -> TokenSet:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        if images.shape[-1] != 3:
            raise ValueError(f"expected 3 channels, got shape {images.shape}")
        grid = (images.shape[1] // self.stride, images.shape[2] // self.stride)
        x = self.embed_patches(images)
        x = x + sinusoidal_pe(grid, self.d_model).astype(x.dtype)
        for blk in self.blocks:
            x = blk(x)
        return TokenSet(x, grid, kind)


def extract(image_crop: np.ndarray, backbone: PatchBackbone, kind: str = "search") -> TokenSet:
    return backbone(image_crop, kind)
