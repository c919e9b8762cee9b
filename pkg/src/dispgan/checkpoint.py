"""Binary checkpoint container.

Layout (little-endian): magic ``DSPC``, u32 version, u64 meta length,
meta JSON (sorted keys), u32 tensor count, then per tensor: u16 name
length, name bytes, u8 dtype code, u8 ndim, u32 dims, u64 payload bytes,
raw data.  Tensor bytes round-trip exactly; rewriting a loaded checkpoint
reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DSPC"
FORMAT_VERSION = 1

_DTYPES = {0: "<f8", 1: "<f4", 2: "<u4", 3: "<i8"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


class Checkpoint:
    """Ordered named tensors plus a JSON-serializable meta dict."""

    def __init__(self, meta: dict | None = None):
        self.meta = meta or {}
        self.tensors: dict[str, np.ndarray] = {}

    def put(self, name: str, arr: np.ndarray) -> None:
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            arr = arr.astype(np.float64)
        self.tensors[name] = arr

    def get(self, name: str) -> np.ndarray:
        if name not in self.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        return self.tensors[name]

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        plen = len(prefix)
        return {name[plen:]: arr for name, arr in self.tensors.items()
                if name.startswith(prefix)}

    def save(self, path) -> None:
        chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
        meta_raw = json.dumps(self.meta, sort_keys=True).encode()
        chunks.append(struct.pack("<Q", len(meta_raw)))
        chunks.append(meta_raw)
        chunks.append(struct.pack("<I", len(self.tensors)))
        for name, arr in self.tensors.items():
            raw_name = name.encode()
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            payload = le.tobytes()
            chunks.append(struct.pack("<H", len(raw_name)))
            chunks.append(raw_name)
            chunks.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(struct.pack("<Q", len(payload)))
            chunks.append(payload)
        Path(path).write_bytes(b"".join(chunks))

    @staticmethod
    def load(path) -> "Checkpoint":
        raw = Path(path).read_bytes()
        if len(raw) < 8 or raw[:4] != MAGIC:
            raise CheckpointError(f"{path}: bad magic at offset 0")
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version} "
                f"(expected {FORMAT_VERSION})")
        off = 8
        (meta_len,) = struct.unpack_from("<Q", raw, off)
        off += 8
        meta = json.loads(raw[off:off + meta_len].decode())
        off += meta_len
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        ckpt = Checkpoint(meta)
        try:
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", raw, off)
                off += 2
                name = raw[off:off + name_len].decode()
                off += name_len
                code, ndim = struct.unpack_from("<BB", raw, off)
                off += 2
                shape = struct.unpack_from(f"<{ndim}I", raw, off)
                off += 4 * ndim
                (nbytes,) = struct.unpack_from("<Q", raw, off)
                off += 8
                if code not in _DTYPES:
                    raise CheckpointError(f"{path}: unknown dtype code {code}")
                arr = np.frombuffer(raw, dtype=_DTYPES[code], count=nbytes
                                    // np.dtype(_DTYPES[code]).itemsize,
                                    offset=off).reshape(shape)
                off += nbytes
                ckpt.tensors[name] = arr.copy()
        except (struct.error, ValueError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"{path}: truncated at offset {off}")
        if off != len(raw):
            raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
        return ckpt
