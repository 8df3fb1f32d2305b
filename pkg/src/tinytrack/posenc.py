"""Untied absolute positional encoding with relative bias, generalized to
2-D grids and to concatenated multi-source token sequences.

Tokens of a grid are flattened row-major: index ``i * W + j`` for row ``i``,
column ``j``.  Positional logits for a query from source ``g`` at ``(i, j)``
and a key from source ``h`` at ``(m, n)`` are

    [(p1_g[i] + p2_g[j]) UQ_g] . [(p1_h[m] + p2_h[n]) UK_h] / sqrt(2 d_head)
    + b_gh[m - i, n - j]

with one ``UQ``/``UK``/``b`` per head and ``p`` shared across heads.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .nn import Module, trunc_normal
from .tensor import Parameter, Tensor

TEMPLATE = "template"
SEARCH = "search"
SOURCE_IDS = {TEMPLATE: 1, SEARCH: 2}


@dataclass(frozen=True)
class SourceTag:
    kind: str
    grid: tuple

    def __post_init__(self):
        if self.kind not in SOURCE_IDS:
            raise ValueError(f"unknown source tag {self.kind!r}")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ValueError(f"bad grid {self.grid}")

    @property
    def length(self) -> int:
        return self.grid[0] * self.grid[1]


@functools.lru_cache(maxsize=64)
def relative_index(q_grid: tuple, k_grid: tuple) -> tuple:
    """Table row/col indices [Lq, Lk] for offsets (m - i, n - j), shifted to be >= 0."""
    hq, wq = q_grid
    hk, wk = k_grid
    qi, qj = np.divmod(np.arange(hq * wq), wq)
    km, kn = np.divmod(np.arange(hk * wk), wk)
    rows = km[None, :] - qi[:, None] + (hq - 1)
    cols = kn[None, :] - qj[:, None] + (wq - 1)
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


class UntiedPositionalEncoding(Module):
    """One parameter set; the encoder owns one instance, the decoder another."""

    def __init__(self, d_model: int, n_heads: int, grids: dict, rng: np.random.Generator,
                 embed_std: float = 0.02, query_sources: Optional[Sequence[str]] = None):
        """``query_sources`` limits which sources may issue queries (the decoder
        only queries from the search region); keys may come from any source."""
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.grids = {k: tuple(v) for k, v in grids.items()}
        for k in self.grids:
            SourceTag(k, self.grids[k])
        queries = list(self.grids) if query_sources is None else list(query_sources)
        for k in queries:
            if k not in self.grids:
                raise ValueError(f"unknown source tag {k!r}")
        self.p_rows = {k: Parameter(rng.normal(0.0, embed_std, (h, d_model)))
                       for k, (h, _) in self.grids.items()}
        self.p_cols = {k: Parameter(rng.normal(0.0, embed_std, (w, d_model)))
                       for k, (_, w) in self.grids.items()}
        shape = (n_heads, d_model, self.d_head)
        self.u_q = {k: Parameter(trunc_normal(rng, shape)) for k in queries}
        self.u_k = {k: Parameter(trunc_normal(rng, shape)) for k in self.grids}
        self.rel_bias = {}
        for g in queries:
            hg, wg = self.grids[g]
            for h, (hh, wh) in self.grids.items():
                self.rel_bias[f"{g}_{h}"] = Parameter(np.zeros((n_heads, hg + hh - 1, wg + wh - 1)))

    def tag(self, kind: str) -> SourceTag:
        if kind not in self.grids:
            raise ValueError(f"unknown source tag {kind!r}")
        return SourceTag(kind, self.grids[kind])

    def _check(self, src: SourceTag) -> None:
        if src.kind not in self.grids:
            raise ValueError(f"unknown source tag {src.kind!r}")
        if tuple(src.grid) != self.grids[src.kind]:
            raise ValueError(f"grid {src.grid} does not match parameters {self.grids[src.kind]}")

    def embeddings(self, src: SourceTag) -> Tensor:
        """Summed per-axis embeddings for every token of ``src``, [H*W, d_model]."""
        self._check(src)
        h, w = src.grid
        rows = self.p_rows[src.kind].reshape(h, 1, self.d_model)
        cols = self.p_cols[src.kind].reshape(1, w, self.d_model)
        return (rows + cols).reshape(h * w, self.d_model)

    def abs_block(self, q_src: SourceTag, k_src: SourceTag) -> Tensor:
        """Untied absolute term for all heads, [n_heads, Lq, Lk]."""
        if q_src.kind not in self.u_q:
            raise ValueError(f"source {q_src.kind!r} cannot issue queries here")
        qp = T.matmul(self.embeddings(q_src), self.u_q[q_src.kind])
        kp = T.matmul(self.embeddings(k_src), self.u_k[k_src.kind])
        return T.matmul(qp, kp.swapaxes(-1, -2)) * (1.0 / math.sqrt(2 * self.d_head))

    def rel_block(self, q_src: SourceTag, k_src: SourceTag) -> Tensor:
        """Relative bias lookups for all heads, [n_heads, Lq, Lk]."""
        self._check(q_src)
        self._check(k_src)
        rows, cols = relative_index(q_src.grid, k_src.grid)
        table = self.rel_bias[f"{q_src.kind}_{k_src.kind}"]
        assert rows.min() >= 0 and rows.max() < table.shape[1]
        assert cols.min() >= 0 and cols.max() < table.shape[2]
        return table[:, rows, cols]

    def fusion_bias(self, q_layout: Sequence[SourceTag],
                    k_layout: Optional[Sequence[SourceTag]] = None) -> Tensor:
        """Block matrix of positional logits for concatenated sources, [n_heads, Lq, Lk]."""
        if k_layout is None:
            k_layout = q_layout
        rows = []
        for g in q_layout:
            blocks = [self.abs_block(g, h) + self.rel_block(g, h) for h in k_layout]
            rows.append(blocks[0] if len(blocks) == 1 else T.concat(blocks, axis=-1))
        return rows[0] if len(rows) == 1 else T.concat(rows, axis=-2)


def untied_abs_term(pe: UntiedPositionalEncoding, q_source: SourceTag, k_source: SourceTag,
                    head: int) -> Tensor:
    return pe.abs_block(q_source, k_source)[head]


def relative_bias_term(pe: UntiedPositionalEncoding, q_source: SourceTag, k_source: SourceTag,
                       head: int) -> Tensor:
    return pe.rel_block(q_source, k_source)[head]


def fusion_bias(pe: UntiedPositionalEncoding, q_layout: Sequence[SourceTag],
                k_layout: Optional[Sequence[SourceTag]] = None, head: Optional[int] = None) -> Tensor:
    bias = pe.fusion_bias(q_layout, k_layout)
    return bias if head is None else bias[head]


@functools.lru_cache(maxsize=64)
def _sinusoid(grid: tuple, d_model: int) -> np.ndarray:
    out = _build_sinusoid(grid, d_model)
    out.flags.writeable = False
    return out


def sinusoidal_pe(grid: tuple, d_model: int) -> np.ndarray:
    """Fixed 2-D sinusoid, [H*W, d_model].

    The first half of the channels encodes the row index, the second half the
    column index; within each half even channels are sines and odd ones
    cosines of geometrically spaced frequencies.
    """
    if d_model % 2:
        raise ValueError(f"sinusoidal encoding needs an even d_model, got {d_model}")
    return _sinusoid(tuple(grid), int(d_model))


def _build_sinusoid(grid: tuple, d_model: int) -> np.ndarray:
    h, w = grid
    half = d_model // 2
    k = np.arange(half) // 2
    freq = 1.0 / (10000.0 ** (2.0 * k / half))
    sin_mask = (np.arange(half) % 2) == 0

    def encode(pos):
        ang = pos[:, None] * freq[None, :]
        return np.where(sin_mask[None, :], np.sin(ang), np.cos(ang))

    row = encode(np.arange(h, dtype=np.float64))
    col = encode(np.arange(w, dtype=np.float64))
    out = np.concatenate([np.repeat(row, w, axis=0), np.tile(col, (h, 1))], axis=1)
    return out
