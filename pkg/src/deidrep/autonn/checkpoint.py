"""Binary checkpoint container.

Little-endian layout, version 1::

    magic          8 bytes  b"DEIDCKPT"
    version        uint32
    manifest_len   uint32
    manifest       manifest_len bytes, UTF-8 JSON object
    block_count    uint32
    per block:
        name_len   uint16
        name       name_len bytes, UTF-8
        ndim       uint8
        dims       ndim x uint64
        payload    prod(dims) x float64
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .params import ParamSet

MAGIC = b"DEIDCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(blocks: dict[str, np.ndarray], manifest: dict) -> bytes:
    man = json.dumps(manifest, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(man)), man, struct.pack("<I", len(blocks))]
    for name, arr in blocks.items():
        nb = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, man_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    manifest = json.loads(data[pos:pos + man_len].decode("utf-8"))
    pos += man_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    blocks = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        blocks[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    if pos != len(data):
        raise CheckpointError("trailing bytes after last block")
    return blocks, manifest


def save_checkpoint(path: str | Path, params: ParamSet, manifest: dict) -> str:
    """Write ``params`` and return the file's sha256 fingerprint."""
    data = encode_checkpoint(params.state(), manifest)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_checkpoint(Path(path).read_bytes())


def file_fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
