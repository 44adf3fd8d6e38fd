"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic        8 bytes   b"SHENCKPT"
    version      u32       1
    config_len   u32       length of the UTF-8 config text
    config       bytes     canonical JSON {"model": {...}, "train": {...} | null}
    n_params     u32
    n_params x:
        name_len u16, name (UTF-8)
        rank     u8,  dims (u32 x rank)
        payload  float32 x prod(dims), row-major
    crc32        u32       zlib.crc32 of every preceding byte

Any truncation, trailing garbage, or checksum mismatch raises
:class:`~sharedenc.errors.CheckpointError`.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import TrainConfig, canonical_json
from .encoder import EncoderModel, ModelConfig
from .errors import CheckpointError, SharedEncError

MAGIC = b"SHENCKPT"
VERSION = 1


def save_checkpoint(model: EncoderModel, path: str | os.PathLike,
                    train_config: TrainConfig | None = None) -> Path:
    cfg = {"model": model.config.to_dict(),
           "train": train_config.to_dict() if train_config is not None else None}
    text = canonical_json(cfg).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(text)), text,
             struct.pack("<I", len(model.params))]
    for name, p in model.params.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.asarray(p.data, dtype="<f4").tobytes())
    body = b"".join(parts)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (config dict, ordered name -> float32 array) from a checkpoint file."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(buf) < len(MAGIC) + 4 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    r = _Reader(body)
    r.take(len(MAGIC))
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        cfg = json.loads(r.take(cfg_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt config block ({exc})") from None
    (count,) = r.unpack("<I")
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode()
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: corrupt parameter name") from None
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        state[name] = arr
    if r.pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - r.pos} unexpected trailing bytes")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    return cfg, state


def load_checkpoint(path: str | os.PathLike) -> tuple[EncoderModel, TrainConfig | None]:
    cfg, state = read_checkpoint(path)
    try:
        model = EncoderModel(ModelConfig.from_dict(cfg["model"]))
        model.load_state_dict(state)
        train = TrainConfig.from_dict(cfg["train"]) if cfg.get("train") else None
    except (KeyError, TypeError, SharedEncError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: checkpoint does not describe a valid model ({exc})") from None
    return model, train

