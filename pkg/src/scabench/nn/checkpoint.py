"""Model checkpoint file format.

Layout: a magic line with a format version, one line with the byte length
of a JSON header, the header itself (model metadata plus the ordered tensor
directory), then the raw tensor payloads as little-endian float64 in
directory order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataFormatError

MAGIC = b"SCABENCH-CKPT 1"


def save_checkpoint(path, meta: dict, tensors: list[tuple[str, np.ndarray]]):
    directory = []
    blobs = []
    for name, value in tensors:
        arr = np.asarray(value, dtype=np.float64)
        directory.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.astype("<f8").tobytes())
    header = json.dumps({"meta": meta, "tensors": directory}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(str(len(header)).encode() + b"\n")
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Returns (meta dict, ordered {name: float64 array})."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0 or raw[:nl] != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file (bad magic)")
    nl2 = raw.find(b"\n", nl + 1)
    try:
        header_len = int(raw[nl + 1 : nl2])
    except ValueError:
        raise DataFormatError(f"{path}: corrupt header length") from None
    start = nl2 + 1
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise DataFormatError(f"{path}: corrupt header: {e}") from None
    offset = start + header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise DataFormatError(f"{path}: truncated tensor {entry['name']!r}")
        tensors[entry["name"]] = (
            np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        )
        offset = end
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["meta"], tensors
