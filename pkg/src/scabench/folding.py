"""Folding one-dimensional traces into fixed-size matrices.

Side-channel traces vary in length, but the reconstruction models want a
fixed K x N x N tensor. A trace is folded channel by channel, row-major
within each channel: flat cell f = k*N*N + row*N + col holds record f.
Cells past the trace length are zero padding, and ``valid_len`` remembers
where the data ends so the mapping stays invertible.

Values are stored as float64. Address-derived indices in practice sit far
below 2**53, so the cast is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import CapacityError, DataFormatError


class MatrixShape(NamedTuple):
    channels: int
    n: int

    @property
    def capacity(self) -> int:
        return self.channels * self.n * self.n


def as_shape(shape) -> MatrixShape:
    k, n = shape
    k, n = int(k), int(n)
    if k < 1 or n < 1:
        raise DataFormatError(f"matrix shape needs positive K and N, got ({k}, {n})")
    return MatrixShape(k, n)


def square_shape(length: int, channels: int = 1) -> MatrixShape:
    """Smallest square shape with the given channel count that fits length."""
    if length < 0:
        raise DataFormatError("trace length cannot be negative")
    n = 1
    while channels * n * n < length:
        n += 1
    return MatrixShape(channels, n)


@dataclass
class TraceMatrix:
    data: np.ndarray  # (K, N, N) float64
    valid_len: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[1] != self.data.shape[2]:
            raise DataFormatError(f"matrix data must be (K, N, N), got {self.data.shape}")
        if not 0 <= self.valid_len <= self.shape.capacity:
            raise DataFormatError(
                f"valid_len {self.valid_len} outside [0, {self.shape.capacity}]"
            )

    @property
    def shape(self) -> MatrixShape:
        return MatrixShape(self.data.shape[0], self.data.shape[1])

    def flat_values(self) -> np.ndarray:
        """The original record values, in trace order."""
        return self.data.reshape(-1)[: self.valid_len]


def fold(values, shape, truncate: bool = False) -> TraceMatrix:
    """Fold a value sequence into a TraceMatrix.

    Raises CapacityError when the trace does not fit, reporting the smallest
    channel count that would; pass truncate=True to keep the first
    capacity records instead.
    """
    shape = as_shape(shape)
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    if flat.shape[0] > shape.capacity:
        if not truncate:
            need_k = math.ceil(flat.shape[0] / (shape.n * shape.n))
            raise CapacityError(
                f"trace of length {flat.shape[0]} exceeds capacity {shape.capacity} "
                f"of shape {shape.channels}x{shape.n}x{shape.n}; "
                f"K={need_k} would fit at N={shape.n}",
                required_channels=need_k,
            )
        flat = flat[: shape.capacity]
    data = np.zeros(shape.capacity, dtype=np.float64)
    data[: flat.shape[0]] = flat
    return TraceMatrix(data.reshape(shape.channels, shape.n, shape.n), int(flat.shape[0]))


def unfold_index(cell, shape, valid_len: int) -> int | None:
    """Map a matrix cell back to its record position.

    ``cell`` is either a flat index or a (channel, row, col) triple. Returns
    the record index, or None when the cell is zero padding. Cells outside
    the matrix raise IndexError.
    """
    shape = as_shape(shape)
    if isinstance(cell, (tuple, list)):
        k, row, col = (int(c) for c in cell)
        if not (0 <= k < shape.channels and 0 <= row < shape.n and 0 <= col < shape.n):
            raise IndexError(
                f"cell ({k}, {row}, {col}) outside matrix {shape.channels}x{shape.n}x{shape.n}"
            )
        flat = k * shape.n * shape.n + row * shape.n + col
    else:
        flat = int(cell)
        if not 0 <= flat < shape.capacity:
            raise IndexError(f"flat index {flat} outside capacity {shape.capacity}")
    if not 0 <= valid_len <= shape.capacity:
        raise DataFormatError(f"valid_len {valid_len} outside [0, {shape.capacity}]")
    return flat if flat < valid_len else None


@dataclass(frozen=True)
class NormStats:
    """Dataset-wide min/max used for [0, 1] scaling."""

    lo: float
    hi: float


def fit_norm(traces: Iterable) -> NormStats:
    """Min/max over every record of the given traces (or raw value arrays)."""
    lo = math.inf
    hi = -math.inf
    count = 0
    for t in traces:
        values = np.asarray(getattr(t, "values", t), dtype=np.float64)
        if values.size == 0:
            continue
        count += values.size
        lo = min(lo, float(values.min()))
        hi = max(hi, float(values.max()))
    if count == 0:
        raise DataFormatError("cannot fit normalization stats on empty input")
    return NormStats(lo, hi)


def apply_norm(matrix: TraceMatrix, stats: NormStats) -> TraceMatrix:
    """Scale valid cells to [0, 1] (clamped); padding cells stay zero."""
    flat = matrix.data.reshape(-1).copy()
    span = stats.hi - stats.lo
    valid = flat[: matrix.valid_len]
    if span <= 0:
        flat[: matrix.valid_len] = 0.0
    else:
        flat[: matrix.valid_len] = np.clip((valid - stats.lo) / span, 0.0, 1.0)
    return TraceMatrix(flat.reshape(matrix.data.shape), matrix.valid_len)


def encode_pp(vectors: Sequence, shape, truncate: bool = False) -> TraceMatrix:
    """Fold a sequence of Prime+Probe activity vectors, time-major.

    Bits of vector 0 occupy cells 0..S-1, vector 1 the next S, and so on.
    All vectors must have equal length. An empty sequence folds to an
    all-zero matrix with valid_len 0.
    """
    shape = as_shape(shape)
    rows = [np.asarray(getattr(v, "bits", v), dtype=np.float64).reshape(-1) for v in vectors]
    if rows:
        widths = {r.shape[0] for r in rows}
        if len(widths) != 1:
            raise DataFormatError(f"activity vectors differ in length: {sorted(widths)}")
        bits = np.concatenate(rows)
    else:
        bits = np.zeros(0, dtype=np.float64)
    return fold(bits, shape, truncate=truncate)


def _format_value(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def format_matrix(matrix: TraceMatrix) -> str:
    shape = matrix.shape
    lines = [f"{shape.channels} {shape.n} {matrix.valid_len}"]
    grid = matrix.data.reshape(shape.channels * shape.n, shape.n)
    for row in grid:
        lines.append(" ".join(_format_value(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> TraceMatrix:
    tokens = text.split()
    if len(tokens) < 3:
        raise DataFormatError("matrix file needs a 'K N valid_len' header")
    try:
        k, n, valid_len = int(tokens[0]), int(tokens[1]), int(tokens[2])
    except ValueError:
        raise DataFormatError(f"bad matrix header {tokens[:3]!r}") from None
    body = tokens[3:]
    if len(body) != k * n * n:
        raise DataFormatError(f"expected {k * n * n} values, found {len(body)}")
    try:
        data = np.array([float(t) for t in body], dtype=np.float64)
    except ValueError as e:
        raise DataFormatError(f"bad matrix value: {e}") from None
    return TraceMatrix(data.reshape(k, n, n), valid_len)
