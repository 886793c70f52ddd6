"""
Checkpoint Module
The MGMK container: one file holding weights, codebooks, overlays,
optimizer moments, RNG state and configs.

Layout (all integers little-endian):
    b"MGMK"  u32 version  u32 metadata length  metadata (UTF-8 JSON)
    section payloads, float32 little-endian, in metadata order
    u32 CRC32 of every preceding byte

metadata["sections"] lists {"name", "shape", "nbytes"} per array; the rest of
the metadata is free-form (configs, step, rng state). Writes go to a temp
file in the target directory followed by os.replace.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from mgmkit.heartofitall.errors import (CheckpointCorruptionError, CheckpointFormatError,
                                        CheckpointVersionError)

logger = logging.getLogger(__name__)

MAGIC = b"MGMK"
VERSION = 1
_SECTION_DTYPE = np.dtype("<f4")
_HEADER = struct.Struct("<4sII")
_CRC = struct.Struct("<I")

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    """Flat, slash-named arrays plus JSON-able metadata."""
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", 0))

    def add(self, prefix: str, arrays: Mapping[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            self.arrays[f"{prefix}/{name}"] = np.asarray(value)

    def group(self, prefix: str) -> Dict[str, np.ndarray]:
        """Arrays under prefix/, with the prefix stripped."""
        head = prefix.rstrip("/") + "/"
        return {k[len(head):]: v for k, v in self.arrays.items() if k.startswith(head)}

    def has_group(self, prefix: str) -> bool:
        head = prefix.rstrip("/") + "/"
        return any(k.startswith(head) for k in self.arrays)

    def overlay_tasks(self) -> List[str]:
        return sorted({k.split("/")[1] for k in self.arrays if k.startswith("overlay/")})

    def describe(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(k, tuple(v.shape)) for k, v in self.arrays.items()]


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    sections = []
    payloads = []
    for name, value in ckpt.arrays.items():
        data = np.ascontiguousarray(value, dtype=_SECTION_DTYPE).tobytes()
        sections.append({"name": name, "shape": list(np.shape(value)), "nbytes": len(data)})
        payloads.append(data)
    meta = dict(ckpt.metadata)
    meta["sections"] = sections
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _HEADER.pack(MAGIC, VERSION, len(meta_bytes)) + meta_bytes + b"".join(payloads)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < _HEADER.size + _CRC.size:
        magic = blob[:4]
        if magic != MAGIC:
            raise CheckpointFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
        raise CheckpointCorruptionError(f"{source}: truncated file of {len(blob)} bytes")
    magic, version, meta_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"{source}: format version {version}, this build reads {VERSION}")
    body, (crc,) = blob[:-_CRC.size], _CRC.unpack(blob[-_CRC.size:])
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if crc != actual:
        raise CheckpointCorruptionError(f"{source}: CRC mismatch (stored {crc:#010x}, computed {actual:#010x})")

    offset = _HEADER.size
    try:
        meta = json.loads(body[offset:offset + meta_len].decode("utf-8"))
        sections = meta.pop("sections")
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise CheckpointCorruptionError(f"{source}: unreadable metadata ({exc})") from exc
    offset += meta_len
    arrays: Dict[str, np.ndarray] = {}
    for sec in sections:
        nbytes = int(sec["nbytes"])
        expected = int(np.prod(sec["shape"], dtype=np.int64)) * _SECTION_DTYPE.itemsize
        if nbytes != expected or offset + nbytes > len(body):
            raise CheckpointCorruptionError(f"{source}: section {sec['name']} has inconsistent length {nbytes}")
        arrays[sec["name"]] = np.frombuffer(body, _SECTION_DTYPE, nbytes // 4, offset).reshape(sec["shape"]).astype(np.float32)
        offset += nbytes
    if offset != len(body):
        raise CheckpointCorruptionError(f"{source}: {len(body) - offset} trailing bytes after the last section")
    return Checkpoint(arrays, meta)


def checkpoint_save(path: PathLike, ckpt: Checkpoint) -> int:
    """Atomically write ckpt to path; returns bytes written."""
    path = Path(path)
    blob = encode_checkpoint(ckpt)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info("wrote checkpoint %s (%d arrays, %d bytes, step %d)", path, len(ckpt.arrays), len(blob), ckpt.step)
    return len(blob)


def checkpoint_load(path: PathLike) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointFormatError(f"{path}: no such checkpoint") from exc
    return decode_checkpoint(blob, str(path))


def assemble(params=None, codecs: Optional[Mapping[str, Any]] = None, overlays: Optional[Mapping[str, Mapping]] = None,
             optimizer=None, rng=None, configs: Optional[Mapping[str, Any]] = None, step: int = 0,
             extra: Optional[Mapping[str, np.ndarray]] = None) -> Checkpoint:
    """
    Collect run state into one Checkpoint.

    Args:
        params: ModelParams stored under params/
        codecs: name -> FeatureCodec stored under codebook/<name>/
        overlays: task -> flat arrays (LoRA + condition modules) under overlay/<task>/
        optimizer: AdamW; moments under optim/, step count in metadata
        rng: RngStream whose state goes into metadata
        configs: JSON-able configuration sections
        step: training step reached
        extra: further arrays, stored under their own names

    Returns:
        the Checkpoint
    """
    ckpt = Checkpoint(metadata={"step": int(step), "configs": dict(configs or {})})
    if params is not None:
        ckpt.add("params", params.arrays)
        ckpt.metadata["net"] = params.config.to_dict()
    for name, codec in (codecs or {}).items():
        ckpt.add(f"codebook/{name}", codec.arrays())
        ckpt.metadata.setdefault("codecs", {})[name] = asdict(codec.config)
    for task, arrays in (overlays or {}).items():
        ckpt.add(f"overlay/{task}", arrays)
    if optimizer is not None:
        ckpt.add("optim", optimizer.state_arrays())
        ckpt.metadata["optim_t"] = optimizer.t
    if rng is not None:
        ckpt.metadata["rng"] = rng.state_dict()
    for name, value in (extra or {}).items():
        ckpt.arrays[name] = np.asarray(value)
    return ckpt
