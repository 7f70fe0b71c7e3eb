"""Parameter checkpoint serialization.

Layout (all integers little-endian, data float64 little-endian):

    magic   4 bytes   b"HQP1"
    count   uint32    number of records
    record (repeated ``count`` times):
        name_len  uint16
        name      UTF-8 bytes
        ndim      uint8
        dims      uint64 * ndim
        data      float64 * prod(dims)
    digest  32 bytes  SHA-256 over everything before it

The trailing digest makes truncation and bit corruption detectable before
anything is applied, so a load is all-or-nothing.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import IntegrityError

MAGIC = b"HQP1"


def encode_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, value in arrays.items():
        value = np.asarray(value, dtype="<f8")
        if value.ndim and not value.flags.c_contiguous:
            value = np.ascontiguousarray(value)
        encoded_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded_name)))
        parts.append(encoded_name)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(value.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_arrays(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 4 + 32:
        raise IntegrityError("checkpoint truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint digest mismatch (corrupt file)")
    if body[:4] != MAGIC:
        raise IntegrityError(f"bad checkpoint magic {body[:4]!r}, expected {MAGIC!r}")
    (count,) = struct.unpack_from("<I", body, 4)
    offset = 8
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", body, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}Q", body, offset)
        offset += 8 * ndim
        n = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(dims)
        offset += 8 * n
        arrays[name] = data.astype(np.float64)
    if offset != len(body):
        raise IntegrityError("checkpoint has trailing bytes")
    return arrays


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_arrays(arrays))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    return decode_arrays(Path(path).read_bytes())
