"""F32T binary tensor container.

One tensor record is::

    magic b"F32T" | u32 rank | u32 dims[rank] | float32 data, row-major

All integers and floats are little-endian.  A file may hold a single record
(feature maps, embedding matrices) or an ASCII header followed by several
named records (model files); see :func:`save_named` / :func:`load_named`.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .errors import CorruptFileError, FormatVersionMismatchError

MAGIC = b"F32T"
_U32 = struct.Struct("<I")
_MAX_RANK = 8


def write_tensor(fh, array: np.ndarray) -> None:
    """Append one F32T record to a binary stream (casts to float32)."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    fh.write(MAGIC)
    fh.write(_U32.pack(arr.ndim))
    for dim in arr.shape:
        fh.write(_U32.pack(dim))
    fh.write(arr.tobytes())


def read_tensor(fh) -> np.ndarray:
    """Read one F32T record; raises on truncation or bad magic."""
    magic = fh.read(4)
    if len(magic) < 4:
        raise CorruptFileError("truncated tensor record (no magic)")
    if magic != MAGIC:
        raise FormatVersionMismatchError(f"bad tensor magic {magic!r}")
    raw = fh.read(4)
    if len(raw) < 4:
        raise CorruptFileError("truncated tensor record (no rank)")
    rank = _U32.unpack(raw)[0]
    if rank > _MAX_RANK:
        raise CorruptFileError(f"implausible tensor rank {rank}")
    dims = []
    for _ in range(rank):
        raw = fh.read(4)
        if len(raw) < 4:
            raise CorruptFileError("truncated tensor record (dims)")
        dims.append(_U32.unpack(raw)[0])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = fh.read(4 * count)
    if len(payload) < 4 * count:
        raise CorruptFileError("truncated tensor record (data)")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def save_tensor(path: str, array: np.ndarray) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        write_tensor(fh, array)
    os.replace(tmp, path)


def load_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def save_named(path: str, header: dict[str, str],
               tensors: dict[str, np.ndarray], kind: str) -> None:
    """Write an ASCII header (``key=value`` lines) plus named F32T records.

    The header always carries the container ``kind`` and version plus a
    ``tensors=`` index naming the records in file order; a blank line
    separates header from binary data.
    """
    lines = [f"{kind} 1"]
    lines += [f"{k}={v}" for k, v in header.items()]
    lines.append("tensors=" + ",".join(tensors))
    text = ("\n".join(lines) + "\n\n").encode("ascii")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(text)
        for arr in tensors.values():
            write_tensor(fh, arr)
    os.replace(tmp, path)


def load_named(path: str, kind: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise CorruptFileError(f"{path}: no header terminator")
    try:
        lines = blob[:sep].decode("ascii").splitlines()
    except UnicodeDecodeError:
        raise CorruptFileError(f"{path}: header is not ASCII") from None
    if not lines or lines[0] != f"{kind} 1":
        raise FormatVersionMismatchError(
            f"{path}: expected {kind!r} version 1 header, got {lines[:1]}"
        )
    header: dict[str, str] = {}
    for line in lines[1:]:
        key, eq, value = line.partition("=")
        if not eq:
            raise CorruptFileError(f"{path}: malformed header line {line!r}")
        header[key] = value
    names = [n for n in header.pop("tensors", "").split(",") if n]
    if not names:
        raise CorruptFileError(f"{path}: empty tensor index")
    stream = io.BytesIO(blob[sep + 2:])
    tensors = {name: read_tensor(stream) for name in names}
    if stream.read(1):
        raise CorruptFileError(f"{path}: trailing bytes after last tensor")
    return header, tensors
