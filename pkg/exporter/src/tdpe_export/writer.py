"""TDPE v1 writer.

Little-endian layout: magic b"TDPE", u32 version=1, u32 dim, u64 count,
then per record [u16 token byte length, UTF-8 token bytes, dim * f32].
This mirrors the consumer's normative byte layout; values are written as
f32 bit patterns untouched.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TDPE"
VERSION = 1

_HEADER = struct.Struct("<4sIIQ")
_TOKEN_LEN = struct.Struct("<H")


def write_tdpe(path: str | Path, vocab: list[str], matrix: np.ndarray) -> int:
    """Write the file and return the number of bytes written."""
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] != len(vocab):
        raise ValueError(f"matrix shape {arr.shape} does not match vocab of {len(vocab)}")
    written = 0
    with open(path, "wb") as fh:
        written += fh.write(_HEADER.pack(MAGIC, VERSION, arr.shape[1], len(vocab)))
        for token, row in zip(vocab, arr):
            raw = token.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"token exceeds u16 length: {token[:40]!r}...")
            written += fh.write(_TOKEN_LEN.pack(len(raw)))
            written += fh.write(raw)
            written += fh.write(row.tobytes())
    return written
