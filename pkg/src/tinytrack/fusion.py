"""Template/search feature fusion.

The concatenation encoder runs shared pre-norm blocks over the joined token
sequence; the decoder lets search tokens attend to the joined sequence once
more.  ``CrossEncoder`` is the two-branch alternative with separate weights
per branch, kept for comparison.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, AttentionWeights, multi_head_attention
from .nn import MLP, LayerNorm, Module
from .posenc import SEARCH, TEMPLATE, SourceTag, UntiedPositionalEncoding, sinusoidal_pe
from .tensor import DimensionError, Tensor

FFN_RATIO = 4


@dataclass
class TokenSet:
    tokens: Tensor  # [B, H*W, C]
    grid: tuple
    source: str

    def __post_init__(self):
        if self.tokens.shape[-2] != self.grid[0] * self.grid[1]:
            raise ValueError(f"{self.tokens.shape[-2]} tokens do not fill grid {self.grid}")

    @property
    def tag(self) -> SourceTag:
        return SourceTag(self.source, self.grid)

    def __len__(self) -> int:
        return self.tokens.shape[-2]


class EncoderBlock(Module):
    """u <- u + MSA(LN(u)); u <- u + FFN(LN(u))."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(cfg.d_model)
        self.attn = AttentionWeights(cfg, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = MLP([cfg.d_model, FFN_RATIO * cfg.d_model, cfg.d_model], rng)

    def __call__(self, u: Tensor, bias: Optional[Tensor] = None) -> Tensor:
        h = self.norm1(u)
        u = u + multi_head_attention(h, h, h, self.attn, bias)
        return u + self.ffn(self.norm2(u))


def _check_channels(z: TokenSet, x: TokenSet) -> None:
    if z.tokens.shape[-1] != x.tokens.shape[-1]:
        raise DimensionError(
            f"template channels {z.tokens.shape[-1]} != search channels {x.tokens.shape[-1]}")


def _with_sine(ts: TokenSet) -> Tensor:
    pe = sinusoidal_pe(ts.grid, ts.tokens.shape[-1]).astype(ts.tokens.dtype)
    return ts.tokens + pe


class ConcatEncoder(Module):
    def __init__(self, cfg: AttentionConfig, n_blocks: int, pe_mode: str, grids: dict,
                 rng: np.random.Generator):
        self.pe_mode = pe_mode
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(n_blocks)]
        self.pe = (UntiedPositionalEncoding(cfg.d_model, cfg.n_heads, grids, rng)
                   if pe_mode == "untied" else None)

    def __call__(self, z: TokenSet, x: TokenSet) -> tuple:
        return encode(z, x, self.blocks, self.pe, self.pe_mode)


def encode(z: TokenSet, x: TokenSet, blocks, pe: Optional[UntiedPositionalEncoding],
           pe_mode: str = "untied") -> tuple:
    """Concat(z, x) -> N shared blocks with the fused positional bias -> DeConcat."""
    _check_channels(z, x)
    if not blocks:
        return z, x
    if pe_mode == "sine":
        zt, xt = _with_sine(z), _with_sine(x)
    else:
        zt, xt = z.tokens, x.tokens
    u = T.concat([zt, xt], axis=-2)
    bias = pe.fusion_bias([z.tag, x.tag]) if pe is not None else None
    for blk in blocks:
        u = blk(u, bias)
    z_out, x_out = T.split(u, [len(z), len(x)], axis=-2)
    return TokenSet(z_out, z.grid, z.source), TokenSet(x_out, x.grid, x.source)


class CrossBlock(Module):
    """Per-branch self-attention, then each branch attends to the other, then FFNs."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        c = cfg.d_model
        self.self_norm = {TEMPLATE: LayerNorm(c), SEARCH: LayerNorm(c)}
        self.self_attn = {TEMPLATE: AttentionWeights(cfg, rng), SEARCH: AttentionWeights(cfg, rng)}
        self.cross_norm_q = {TEMPLATE: LayerNorm(c), SEARCH: LayerNorm(c)}
        self.cross_norm_kv = {TEMPLATE: LayerNorm(c), SEARCH: LayerNorm(c)}
        self.cross_attn = {TEMPLATE: AttentionWeights(cfg, rng), SEARCH: AttentionWeights(cfg, rng)}
        self.ffn_norm = {TEMPLATE: LayerNorm(c), SEARCH: LayerNorm(c)}
        self.ffn = {TEMPLATE: MLP([c, FFN_RATIO * c, c], rng), SEARCH: MLP([c, FFN_RATIO * c, c], rng)}

    def __call__(self, z: Tensor, x: Tensor, biases: dict) -> tuple:
        t = {TEMPLATE: z, SEARCH: x}
        other = {TEMPLATE: SEARCH, SEARCH: TEMPLATE}
        for k in (TEMPLATE, SEARCH):
            h = self.self_norm[k](t[k])
            t[k] = t[k] + multi_head_attention(h, h, h, self.self_attn[k], biases.get((k, k)))
        prev = dict(t)
        for k in (TEMPLATE, SEARCH):
            q = self.cross_norm_q[k](prev[k])
            kv = self.cross_norm_kv[k](prev[other[k]])
            t[k] = prev[k] + multi_head_attention(q, kv, kv, self.cross_attn[k],
                                                  biases.get((k, other[k])))
        for k in (TEMPLATE, SEARCH):
            t[k] = t[k] + self.ffn[k](self.ffn_norm[k](t[k]))
        return t[TEMPLATE], t[SEARCH]


class CrossEncoder(Module):
    def __init__(self, cfg: AttentionConfig, n_blocks: int, pe_mode: str, grids: dict,
                 rng: np.random.Generator):
        self.pe_mode = pe_mode
        self.blocks = [CrossBlock(cfg, rng) for _ in range(n_blocks)]
        self.pe = (UntiedPositionalEncoding(cfg.d_model, cfg.n_heads, grids, rng)
                   if pe_mode == "untied" else None)

    def __call__(self, z: TokenSet, x: TokenSet) -> tuple:
        return encode_cross_variant(z, x, self.blocks, self.pe, self.pe_mode)


def encode_cross_variant(z: TokenSet, x: TokenSet, blocks, pe: Optional[UntiedPositionalEncoding],
                         pe_mode: str = "untied") -> tuple:
    _check_channels(z, x)
    if not blocks:
        return z, x
    if pe_mode == "sine":
        zt, xt = _with_sine(z), _with_sine(x)
    else:
        zt, xt = z.tokens, x.tokens
    biases = {}
    if pe is not None:
        tags = {TEMPLATE: z.tag, SEARCH: x.tag}
        for g in tags:
            for h in tags:
                biases[(g, h)] = pe.fusion_bias([tags[g]], [tags[h]])
    for blk in blocks:
        zt, xt = blk(zt, xt, biases)
    return TokenSet(zt, z.grid, z.source), TokenSet(xt, x.grid, x.source)


class Decoder(Module):
    """x <- x + MCA(LN(x), LN(Concat(z, x))); x <- x + FFN(LN(x)).

    Only search tokens act as queries; the template is not updated.  The
    output passes through a final LayerNorm before the heads, as usual for
    pre-norm stacks.
    """

    def __init__(self, cfg: AttentionConfig, pe_mode: str, grids: dict, rng: np.random.Generator):
        self.pe_mode = pe_mode
        self.norm1 = LayerNorm(cfg.d_model)
        self.attn = AttentionWeights(cfg, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = MLP([cfg.d_model, FFN_RATIO * cfg.d_model, cfg.d_model], rng)
        self.pe = (UntiedPositionalEncoding(cfg.d_model, cfg.n_heads, grids, rng,
                                            query_sources=[SEARCH])
                   if pe_mode == "untied" else None)
        self.norm_out = LayerNorm(cfg.d_model)

    def __call__(self, z: TokenSet, x: TokenSet) -> Tensor:
        return self.norm_out(decode(z, x, self, self.pe))


def decode(z_out: TokenSet, x_out: TokenSet, dec: Decoder,
           pe: Optional[UntiedPositionalEncoding]) -> Tensor:
    _check_channels(z_out, x_out)
    u = T.concat([z_out.tokens, x_out.tokens], axis=-2)
    u_norm = dec.norm1(u)
    _, x_norm = T.split(u_norm, [len(z_out), len(x_out)], axis=-2)
    bias = pe.fusion_bias([x_out.tag], [z_out.tag, x_out.tag]) if pe is not None else None
    x = x_out.tokens + multi_head_attention(x_norm, u_norm, u_norm, dec.attn, bias)
    return x + dec.ffn(dec.norm2(x))
