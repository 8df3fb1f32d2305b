"""Single-file checkpoints.

Layout (all integers little-endian):

    magic      8 bytes  b"TTCKPT\\x00\\x01"
    version    u32
    manifest   u32 length + UTF-8 JSON (format version, resolved run config)
    count      u32
    entries    count x (u16 name length, name, u8 ndim, ndim x u32 extents,
                        float32 payload in row-major order)
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig
from .model import TrackerNet

MAGIC = b"TTCKPT\x00\x01"
FORMAT_VERSION = 1


def _manifest(cfg: RunConfig, n_params: int) -> bytes:
    doc = {"format_version": FORMAT_VERSION, "config": cfg.to_dict(), "n_parameters": n_params}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dumps(model: TrackerNet, cfg: RunConfig) -> bytes:
    params = list(model.named_parameters())
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    man = _manifest(cfg, len(params))
    out += [struct.pack("<I", len(man)), man, struct.pack("<I", len(params))]
    for name, p in params:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        out.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(path, model: TrackerNet, cfg: RunConfig) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model, cfg))
    return path


def read_checkpoint(path) -> tuple:
    """Return (manifest dict, {name: float32 array}) without building a model."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<I", raw, 12)
    off = 16
    manifest = json.loads(raw[off:off + mlen].decode("utf-8"))
    off += mlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape).copy()
        off += 4 * n
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return manifest, tensors


def load_checkpoint(path) -> tuple:
    """Rebuild the model from the embedded config and load its weights.

    Raises if the parameter names or shapes disagree with the config.
    """
    manifest, tensors = read_checkpoint(path)
    cfg = RunConfig.from_dict(manifest["config"])
    model = TrackerNet(cfg.model)
    model.load_state_dict(tensors)
    return model, cfg
