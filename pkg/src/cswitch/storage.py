"""Binary function-stack container and CSV helpers.

Container layout (all little-endian)::

    magic      4 bytes   b"CSWS"
    version    uint32    1
    n_dec      uint32    T + 1
    n_pos      uint32    P
    m          uint32    grid rows
    d          uint32    state dimension
    value      float64   (T+1) * P * m * d, in (t, p, row, col) order
    expected   float64   T * P * m * d, same order
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .model import FunctionStack

MAGIC = b"CSWS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class ArtifactError(ValueError):
    """Malformed artifact or one that does not match the run configuration."""


def save_stack(path, stack: FunctionStack) -> None:
    n_dec, n_pos, m, d = stack.value.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n_dec, n_pos, m, d))
        fh.write(np.ascontiguousarray(stack.value, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(stack.expected, dtype="<f8").tobytes())


def load_stack(path) -> FunctionStack:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ArtifactError(f"{path}: truncated header")
    magic, version, n_dec, n_pos, m, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ArtifactError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ArtifactError(f"{path}: unsupported format version {version}")
    if n_dec < 1:
        raise ArtifactError(f"{path}: header declares no decision epochs")
    n_value = n_dec * n_pos * m * d
    n_expected = (n_dec - 1) * n_pos * m * d
    payload = len(data) - _HEADER.size
    if payload != 8 * (n_value + n_expected):
        raise ArtifactError(f"{path}: payload has {payload} bytes, header implies {8 * (n_value + n_expected)}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    value = body[:n_value].reshape(n_dec, n_pos, m, d).astype(float)
    expected = body[n_value:].reshape(n_dec - 1, n_pos, m, d).astype(float)
    return FunctionStack(value, expected)


def fmt(x) -> str:
    """Shortest round-trip text for a number."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
