"""Versioned binary checkpoint container.

Byte layout (all integers little-endian)::

    magic        8 bytes  b"TLMSCKPT"
    version      u32
    config_hash  32 bytes (sha256 digest)
    vocab_hash   32 bytes (sha256 digest, zeros when no vocabulary)
    step         u64
    meta_len     u32, then meta_len bytes of UTF-8 JSON
    num_blocks   u32
    per block:
        name_len u16, name (UTF-8)
        dtype    u8   (0 = float32, 1 = float64, 2 = int64)
        ndim     u8, then ndim x u64 dims
        values   raw little-endian, C order
    crc32        u32 over every preceding byte

Parameters are stored under their module names; Adam moments under
``adam.m/<name>`` and ``adam.v/<name>``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .optim import ParameterStore

logger = logging.getLogger(__name__)

MAGIC = b"TLMSCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(RuntimeError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


def digest(text: str | bytes | None) -> bytes:
    if text is None:
        return bytes(32)
    if isinstance(text, str):
        # hex digests pass through unchanged
        if len(text) == 64 and all(c in "0123456789abcdef" for c in text):
            return bytes.fromhex(text)
        text = text.encode("utf-8")
    return hashlib.sha256(text).digest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class ModelCheckpoint:
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    config_hash: str = "0" * 64
    vocab_hash: str = "0" * 64
    step: int = 0
    version: int = VERSION

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}

    def load_into(self, module: torch.nn.Module, store: ParameterStore | None = None) -> None:
        params = dict(module.named_parameters())
        missing = set(params) - set(self.tensors)
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)}")
        with torch.no_grad():
            for name, p in params.items():
                arr = self.tensors[name]
                if tuple(arr.shape) != tuple(p.shape):
                    raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {tuple(p.shape)}")
                p.copy_(torch.from_numpy(arr.copy()))
        if store is not None:
            store.step = self.step
            for name, st in store.state.items():
                if f"adam.m/{name}" in self.tensors:
                    st.m.copy_(torch.from_numpy(self.tensors[f"adam.m/{name}"].copy()))
                    st.v.copy_(torch.from_numpy(self.tensors[f"adam.v/{name}"].copy()))


def checkpoint_from_store(store: ParameterStore, meta: dict | None = None, config_hash: str | None = None,
                          vocab_hash: str | None = None, with_optimizer: bool = True) -> ModelCheckpoint:
    tensors = {name: p.detach().cpu().numpy().copy() for name, p in store.params.items()}
    if with_optimizer:
        for name, st in store.state.items():
            tensors[f"adam.m/{name}"] = st.m.cpu().numpy().copy()
            tensors[f"adam.v/{name}"] = st.v.cpu().numpy().copy()
    return ModelCheckpoint(tensors, dict(meta or {}), digest(config_hash).hex(), digest(vocab_hash).hex(),
                           store.step)


def save_checkpoint(store_or_ckpt, path, meta: dict | None = None, config_hash: str | None = None,
                    vocab_hash: str | None = None) -> ModelCheckpoint:
    if isinstance(store_or_ckpt, ModelCheckpoint):
        ckpt = store_or_ckpt
    else:
        ckpt = checkpoint_from_store(store_or_ckpt, meta, config_hash, vocab_hash)
    for name, arr in ckpt.tensors.items():
        if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            raise CheckpointError(f"refusing to save non-finite values in {name}")
    meta_bytes = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", ckpt.version),
        digest(ckpt.config_hash),
        digest(ckpt.vocab_hash),
        struct.pack("<Q", ckpt.step),
        struct.pack("<I", len(meta_bytes)),
        meta_bytes,
        struct.pack("<I", len(ckpt.tensors)),
    ]
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype(_DTYPES[code], copy=False).tobytes())
    body = b"".join(parts)
    body += struct.pack("<I", zlib.crc32(body))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(body)
    tmp.replace(path)
    return ckpt


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_config_hash: str | None = None, expected_vocab_hash: str | None = None,
                    strict: bool = True) -> ModelCheckpoint:
    """Read a checkpoint, verifying magic, version, checksum and (optionally) hashes.

    Hash mismatches raise :class:`CheckpointMismatchError` when ``strict``,
    otherwise they are logged as warnings.
    """
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    if len(data) < len(MAGIC) + 4 + 4:
        raise CorruptCheckpointError("checkpoint truncated")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    cfg = r.take(32).hex()
    voc = r.take(32).hex()
    (step,) = r.unpack("<Q")
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (n_blocks,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_blocks):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CorruptCheckpointError(f"{path}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        dt = _DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="), copy=True)
    ckpt = ModelCheckpoint(tensors, meta, cfg, voc, step, version)
    for label, expected, actual in (("config", expected_config_hash, cfg), ("vocabulary", expected_vocab_hash, voc)):
        if expected is not None and digest(expected).hex() != actual:
            msg = f"{path}: {label} hash mismatch ({actual[:12]} != {digest(expected).hex()[:12]})"
            if strict:
                raise CheckpointMismatchError(msg)
            logger.warning(msg)
    return ckpt
