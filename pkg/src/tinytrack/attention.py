"""Multi-head attention with an optional additive positional logit term."""
from __future__ import annotations

import contextlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import DimensionError, Tensor


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int

    def __post_init__(self):
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


class AttentionWeights(Module):
    """Query/key/value/output projections for one attention module."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg.d_model
        self.wq = Linear(c, c, rng)
        self.wk = Linear(c, c, rng)
        self.wv = Linear(c, c, rng)
        self.wo = Linear(c, c, rng)


_recorder: dict = {"maps": None}


@contextlib.contextmanager
def record_attention():
    """Collect post-softmax maps (numpy, [B, h, Lq, Lk]) of every attention call."""
    old = _recorder["maps"]
    maps: list = []
    _recorder["maps"] = maps
    try:
        yield maps
    finally:
        _recorder["maps"] = old


def _batched(x: Tensor) -> tuple:
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    if x.ndim != 3:
        raise DimensionError(f"expected [L, C] or [B, L, C] tokens, got {x.shape}")
    return x, False


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, c = x.shape
    return x.reshape(b, n, n_heads, c // n_heads).transpose(0, 2, 1, 3)


def attention_logits(q: Tensor, k: Tensor, weights: AttentionWeights, scale: float) -> Tensor:
    """Scaled content logits ``scale * (q Wq)(k Wk)^T`` per head, shape [B, h, Lq, Lk]."""
    q, _ = _batched(q)
    k, _ = _batched(k)
    c = weights.cfg.d_model
    if q.shape[-1] != c or k.shape[-1] != c:
        raise DimensionError(f"token channels {q.shape[-1]}/{k.shape[-1]} != d_model {c}")
    h = weights.cfg.n_heads
    qh = _split_heads(weights.wq(q), h)
    kh = _split_heads(weights.wk(k), h)
    return T.matmul(qh, kh.swapaxes(-1, -2)) * scale


def multi_head_attention(q_tokens: Tensor, k_tokens: Tensor, v_tokens: Tensor,
                         weights: AttentionWeights, bias: Optional[Tensor] = None) -> Tensor:
    """Concat(head_1..head_h) W_O with optional positional logits ``bias`` [h, Lq, Lk].

    With a bias the content logits are scaled by 1/sqrt(2 d_head) so content
    and position contribute on equal footing; without one the usual
    1/sqrt(d_head) applies.
    """
    q, squeeze = _batched(q_tokens)
    k, _ = _batched(k_tokens)
    v, _ = _batched(v_tokens)
    if k.shape[1] != v.shape[1]:
        raise DimensionError(f"key length {k.shape[1]} != value length {v.shape[1]}")
    cfg = weights.cfg
    if v.shape[-1] != cfg.d_model:
        raise DimensionError(f"value channels {v.shape[-1]} != d_model {cfg.d_model}")
    if bias is None:
        logits = attention_logits(q, k, weights, 1.0 / math.sqrt(cfg.d_head))
    else:
        want = (cfg.n_heads, q.shape[1], k.shape[1])
        if tuple(bias.shape[-3:]) != want:
            raise DimensionError(f"bias shape {bias.shape} does not match {want}")
        logits = attention_logits(q, k, weights, 1.0 / math.sqrt(2 * cfg.d_head)) + bias
    attn = T.softmax(logits, axis=-1)
    if _recorder["maps"] is not None:
        _recorder["maps"].append(attn.data.copy())
    vh = _split_heads(weights.wv(v), cfg.n_heads)
    out = T.matmul(attn, vh)
    b, h, n, d = out.shape
    out = weights.wo(out.transpose(0, 2, 1, 3).reshape(b, n, h * d))
    return out.reshape(n, h * d) if squeeze else out


ATTN_MAGIC = b"TTAM"


def write_attention_map(path, arr: np.ndarray) -> None:
    """Row-major little-endian float32 payload after a magic, ndim and dims header."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(ATTN_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_attention_map(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != ATTN_MAGIC:
        raise ValueError(f"{path}: not an attention map file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    return np.frombuffer(raw, dtype="<f4", offset=8 + 4 * ndim).reshape(shape).copy()
