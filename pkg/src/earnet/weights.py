"""Checkpoint serialization.

File layout (all integers little-endian):

    magic   4 bytes  b"BENW"
    version u32      currently 1
    hlen    u64      byte length of the JSON header
    header  hlen bytes, UTF-8 JSON: [{"name", "dtype": "f32", "shape"}, ...]
            in model graph order (parameters and buffers interleaved)
    data    one raw little-endian float32 blob per header entry, in order
    crc     u32      CRC32 over header bytes + all data bytes

Loading validates magic, version, checksum, and that the header matches the
target model's graph exactly; every failure names the offending tensor.
Weights are always stored as float32 (a float64 gradient-check model is cast
down on save).
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .errors import WeightsError
from .layers import Module

__all__ = ["save_weights", "load_weights", "read_header"]

MAGIC = b"BENW"
VERSION = 1


def _header_and_blobs(model: Module) -> tuple[bytes, list[bytes]]:
    entries = []
    blobs = []
    for name, t in model.named_state():
        arr = np.ascontiguousarray(t.data.astype("<f4", copy=False))
        entries.append({"name": name, "dtype": "f32", "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(entries, separators=(",", ":")).encode("utf-8")
    return header, blobs


def save_weights(model: Module, path: str) -> None:
    """Write the model state; the write is atomic (temp file + rename)."""
    header, blobs = _header_and_blobs(model)
    crc = zlib.crc32(header)
    for b in blobs:
        crc = zlib.crc32(b, crc)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
        f.write(struct.pack("<I", crc))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise WeightsError(f"truncated weight file while reading {what}")
    return buf


def read_header(path: str) -> list[dict]:
    """Parse and return the header entries without loading tensor data."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise WeightsError(f"bad magic {magic!r}, not a weight file")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise WeightsError(f"unsupported weight file version {version}")
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        try:
            entries = json.loads(_read_exact(f, hlen, "header").decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as e:
            raise WeightsError(f"corrupt weight header: {e}") from None
    if not isinstance(entries, list):
        raise WeightsError("corrupt weight header: expected a list of tensors")
    return entries


def load_weights(model: Module, path: str) -> None:
    """Load a checkpoint into ``model``, verifying structure and checksum."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise WeightsError(f"bad magic {magic!r}, not a weight file")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise WeightsError(f"unsupported weight file version {version}")
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        header = _read_exact(f, hlen, "header")
        try:
            entries = json.loads(header.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as e:
            raise WeightsError(f"corrupt weight header: {e}") from None

        crc = zlib.crc32(header)
        model_state = list(model.named_state())
        if len(entries) != len(model_state):
            raise WeightsError(
                f"checkpoint holds {len(entries)} tensors, model expects {len(model_state)}"
            )
        arrays = []
        for entry, (name, tensor) in zip(entries, model_state):
            ename = entry.get("name", "<unnamed>")
            if ename != name:
                raise WeightsError(
                    f"tensor order mismatch: checkpoint has {ename!r} where model has {name!r}"
                )
            if entry.get("dtype") != "f32":
                raise WeightsError(f"tensor {name!r} has unsupported dtype {entry.get('dtype')!r}")
            shape = tuple(entry.get("shape", ()))
            if shape != tensor.shape:
                raise WeightsError(
                    f"tensor {name!r} shape mismatch: checkpoint {shape}, model {tensor.shape}"
                )
            nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
            blob = _read_exact(f, nbytes, f"tensor {name!r}")
            crc = zlib.crc32(blob, crc)
            arrays.append(np.frombuffer(blob, dtype="<f4").reshape(shape))
        (stored_crc,) = struct.unpack("<I", _read_exact(f, 4, "checksum"))
        if f.read(1):
            raise WeightsError("trailing bytes after checksum")
    if stored_crc != crc:
        raise WeightsError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {crc:#010x}"
        )
    for arr, (name, tensor) in zip(arrays, model_state):
        tensor.data = arr.astype(tensor.data.dtype, copy=True)
