#!/usr/bin/env python3
"""
FGR1 binary containers

Two layouts share the "FGR1" magic:

* matrix:  magic, u32 rows, u32 cols, rows*cols little-endian float64 (row-major)
* records: magic, u32 0, u32 0, u32 version, u32 header_len, JSON header,
           then the float64 payload of every record back to back

A records file starts like an empty matrix, which is how readers tell the
two apart.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from .errors import ContainerError

logger = logging.getLogger(__name__)

MAGIC = b"FGR1"
RECORDS_VERSION = 1

_U32 = struct.Struct("<I")
_DOUBLE = np.dtype("<f8")

PathLike = Union[str, Path]


def write_matrix(path: PathLike, matrix: np.ndarray) -> None:
    """Write a 1-D or 2-D array as an FGR1 matrix (1-D becomes one row)."""
    data = np.asarray(matrix, dtype=np.float64)
    if data.ndim == 1:
        data = data[np.newaxis, :]
    if data.ndim != 2 or data.size == 0:
        raise ValueError(f"FGR1 matrices must be non-empty 2-D, got shape {data.shape}")
    rows, cols = data.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_U32.pack(rows))
        f.write(_U32.pack(cols))
        f.write(np.ascontiguousarray(data, dtype=_DOUBLE).tobytes())


def read_matrix(path: PathLike) -> np.ndarray:
    """Read an FGR1 matrix file into a [rows, cols] float64 array."""
    raw = Path(path).read_bytes()
    rows, cols = _read_header(raw, path)
    if rows == 0 and cols == 0:
        raise ContainerError(f"{path} is an FGR1 record container, not a matrix")
    expected = 12 + rows * cols * _DOUBLE.itemsize
    if len(raw) != expected:
        raise ContainerError(
            f"{path}: expected {expected} bytes for a {rows}x{cols} matrix, got {len(raw)}"
        )
    return np.frombuffer(raw, dtype=_DOUBLE, offset=12).reshape(rows, cols).astype(np.float64)


def write_records(
    path: PathLike, header: Dict[str, Any], records: List[Tuple[str, np.ndarray]]
) -> None:
    """
    Write named float64 arrays plus a JSON header as an FGR1 record container.

    The record index (name, shape, offset) is stored under header["records"].
    """
    index = []
    offset = 0
    blobs = []
    for name, array in records:
        data = np.ascontiguousarray(array, dtype=_DOUBLE)
        index.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.size
    full_header = dict(header)
    full_header["records"] = index
    encoded = json.dumps(full_header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_U32.pack(0))
        f.write(_U32.pack(0))
        f.write(_U32.pack(RECORDS_VERSION))
        f.write(_U32.pack(len(encoded)))
        f.write(encoded)
        for blob in blobs:
            f.write(blob)
    logger.debug(f"Wrote {len(records)} records to {path}")


def read_records(path: PathLike) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read an FGR1 record container; returns (header, name -> array)."""
    raw = Path(path).read_bytes()
    rows, cols = _read_header(raw, path)
    if rows != 0 or cols != 0:
        raise ContainerError(f"{path} is an FGR1 matrix, not a record container")
    if len(raw) < 20:
        raise ContainerError(f"{path}: truncated record header")
    (version,) = _U32.unpack_from(raw, 12)
    if version != RECORDS_VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    (header_len,) = _U32.unpack_from(raw, 16)
    header_end = 20 + header_len
    try:
        header = json.loads(raw[20:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: corrupt JSON header: {e}") from e

    payload = raw[header_end:]
    n_values = len(payload) // _DOUBLE.itemsize
    values = np.frombuffer(payload[: n_values * _DOUBLE.itemsize], dtype=_DOUBLE)
    arrays: Dict[str, np.ndarray] = {}
    for entry in header.get("records", []):
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start + size > n_values:
            raise ContainerError(f"{path}: record '{entry['name']}' is truncated")
        arrays[entry["name"]] = values[start : start + size].reshape(shape).astype(np.float64)
    return header, arrays


def _read_header(raw: bytes, path: PathLike) -> Tuple[int, int]:
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ContainerError(f"{path} is not an FGR1 file")
    (rows,) = _U32.unpack_from(raw, 4)
    (cols,) = _U32.unpack_from(raw, 8)
    return rows, cols
