"""Binary matrix files and key=value text files.

Matrix file layout: 16-byte header ``b"ROMF"``, ``u32 rows``, ``u32 cols``,
``u32 flags``, followed by little-endian float64 values in column-major
order.  Third-order tensors are stored as stacked slices: a tensor of shape
``(s, r, c)`` becomes an ``r x (s*c)`` matrix with :data:`FLAG_STACKED` set;
the slice count is recorded by the caller (model manifest).
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ROMF"
HEADER = struct.Struct("<4sIII")
FLAG_STACKED = 1


class FormatError(ValueError):
    pass


def write_matrix(path: str | Path, a: np.ndarray, flags: int = 0) -> None:
    a = np.asarray(a, dtype="<f8")
    if a.ndim == 1:
        a = a[:, None]
    elif a.ndim == 3:
        s, r, c = a.shape
        a = np.concatenate(list(a), axis=1) if s else np.zeros((r, 0))
        flags |= FLAG_STACKED
    if a.ndim != 2:
        raise ValueError(f"cannot store array of shape {a.shape}")
    rows, cols = a.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, rows, cols, flags))
        fh.write(np.asfortranarray(a).tobytes(order="F"))


def read_header(path: str | Path) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, rows, cols, flags = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    return rows, cols, flags


def read_matrix(path: str | Path, slices: int | None = None) -> np.ndarray:
    rows, cols, flags = read_header(path)
    data = np.fromfile(path, dtype="<f8", offset=HEADER.size)
    if data.size != rows * cols:
        raise FormatError(f"{path}: payload has {data.size} values, header says {rows}x{cols}")
    a = data.reshape((rows, cols), order="F")
    if flags & FLAG_STACKED:
        if slices is None:
            raise FormatError(f"{path}: stacked tensor needs a slice count")
        if slices == 0:
            return np.zeros((0, rows, 0))
        if cols % slices:
            raise FormatError(f"{path}: {cols} columns not divisible by {slices} slices")
        return np.stack(np.split(a, slices, axis=1))
    return a


def checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def format_value(v) -> str:
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_kv(path: str | Path, items: dict, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {format_value(v)}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split(" #", 1)[0].strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
