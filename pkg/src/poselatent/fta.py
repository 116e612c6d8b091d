"""Flat tensor archive (FTA) reader/writer.

Binary layout, all integers little-endian:

    magic   4 bytes  b"FTA1"
    count   u32      number of tensors
    per tensor:
        name_len u32
        name     UTF-8 bytes
        dtype    u8    0 = float32
        rank     u8
        dims     rank x u32
        payload  prod(dims) * itemsize bytes, little-endian

Tensors keep their insertion order, so writing the same mapping twice
produces byte-identical files.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ArchiveError

MAGIC = b"FTA1"

_DTYPE_CODES = {0: np.dtype("<f4")}
_CODE_FOR_KIND = {np.dtype("<f4"): 0}


def save_fta(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors to ``path``.

    Arrays are converted to little-endian float32; anything that cannot be
    represented raises ArchiveError.
    """
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        if a.ndim == 0:
            a = a.reshape(1)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", _CODE_FOR_KIND[a.dtype], a.ndim))
        chunks.append(struct.pack("<%dI" % a.ndim, *a.shape))
        chunks.append(a.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_fta(path: str | Path) -> dict[str, np.ndarray]:
    """Read a tensor archive, returning name -> float32 array (insertion order)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ArchiveError(f"cannot read archive {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise ArchiveError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    off = 4
    try:
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            dtype_code, rank = struct.unpack_from("<BB", blob, off)
            off += 2
            if dtype_code not in _DTYPE_CODES:
                raise ArchiveError(f"{path}: tensor {name!r} has unknown dtype code {dtype_code}")
            dims = struct.unpack_from("<%dI" % rank, blob, off)
            off += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            dt = _DTYPE_CODES[dtype_code]
            nbytes = n * dt.itemsize
            if off + nbytes > len(blob):
                raise ArchiveError(f"{path}: tensor {name!r} payload truncated "
                                   f"(need {nbytes} bytes at offset {off}, have {len(blob) - off})")
            arr = np.frombuffer(blob[off : off + nbytes], dtype=dt).reshape(dims)
            off += nbytes
            out[name] = arr.copy()
    except struct.error as exc:
        raise ArchiveError(f"{path}: truncated archive header: {exc}") from exc
    if off != len(blob):
        raise ArchiveError(f"{path}: {len(blob) - off} trailing bytes after last tensor")
    return out
