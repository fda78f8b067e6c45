"""Leakage localization: from attention weights back to instructions.

The spatial attention gates inside a trained encoder say which regions of
the folded trace the model found informative. Folding is position
preserving, so those weights map straight back onto trace records, and an
aligned trace maps each record to the instruction that produced it. The
aggregate over many traces is a per-function leak frequency table, the
kind of artifact a developer can act on.

Only aligned scalar-channel traces support the instruction step;
Prime+Probe vectors have no record-to-instruction correspondence, so they
are rejected rather than attributed by guesswork.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, UnalignedTraceError
from .folding import MatrixShape, TraceMatrix, apply_norm, as_shape, fold
from .model import AttackModel
from .traces import MemoryTrace, SideChannelTrace
from .victims import SymbolRange, lookup_symbol

UNKNOWN_FUNCTION = "<unknown>"


def attention_map(model: AttackModel, matrix: TraceMatrix) -> np.ndarray:
    """Per-record weights for one folded trace, length ``valid_len``.

    Runs the encoder, reads the earliest spatial attention map (the one
    with the finest positional correspondence), upsamples it to the matrix
    grid by nearest neighbor and reads off the cells that hold records.
    Channel index does not enter: the map is shared across channels.
    """
    k, n = matrix.data.shape[0], matrix.data.shape[1]
    model.encoder.forward(matrix.data[None, :, :, :])
    amap = model.encoder.spatial_maps()[0][0, 0]  # (h, w) of the earliest gate
    if n % amap.shape[0] or n % amap.shape[1]:
        raise DataFormatError(
            f"attention map {amap.shape} does not tile the {n}x{n} matrix"
        )
    amap = np.repeat(np.repeat(amap, n // amap.shape[0], axis=0),
                     n // amap.shape[1], axis=1)
    flat = np.tile(amap.reshape(-1), k)  # same map for every channel plane
    return flat[: matrix.valid_len].copy()


def default_topk(valid_len: int) -> int:
    """Default flag budget: 0.1% of the records, at least one."""
    return max(1, round(valid_len * 0.001))


def rank_records(weights: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest weights; ties go to the lower index."""
    if k < 1:
        raise DataFormatError(f"k must be >= 1, got {k}")
    w = np.asarray(weights, dtype=np.float64)
    k = min(k, w.shape[0])
    order = np.argsort(-w, kind="stable")
    return order[:k]


@dataclass
class LeakageReport:
    """Flagged leak summary: per-function rows plus the raw addresses."""

    # function -> (distinct flagged instruction addresses, total flag count)
    _tally: dict = field(default_factory=dict)
    n_traces: int = 0

    def add_trace(self, indices: np.ndarray, trace: MemoryTrace,
                  symbols: list[SymbolRange]):
        self.n_traces += 1
        for i in indices:
            if i >= len(trace):
                raise DataFormatError(
                    f"record index {i} outside trace of length {len(trace)}"
                )
            ip = int(trace.instruction_addresses[i])
            name = lookup_symbol(symbols, ip) or UNKNOWN_FUNCTION
            ips, freq = self._tally.get(name, (set(), 0))
            ips.add(ip)
            self._tally[name] = (ips, freq + 1)

    def merge(self, other: "LeakageReport"):
        self.n_traces += other.n_traces
        for name, (ips, freq) in other._tally.items():
            mine, myfreq = self._tally.get(name, (set(), 0))
            self._tally[name] = (mine | ips, myfreq + freq)

    def rows(self) -> list[tuple[str, int, int]]:
        """(function, num_instructions, frequency), most frequent first."""
        out = [(name, len(ips), freq) for name, (ips, freq) in self._tally.items()]
        out.sort(key=lambda r: (-r[2], r[0]))
        return out

    def total_frequency(self) -> int:
        return sum(freq for _, freq in self._tally.values())

    def addresses(self) -> list[int]:
        """All distinct flagged instruction addresses, ascending."""
        merged = set()
        for ips, _ in self._tally.values():
            merged |= ips
        return sorted(merged)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("function", "num_instructions", "frequency"))
        for row in self.rows():
            writer.writerow(row)
        return buf.getvalue()

    def address_lines(self) -> str:
        return "".join(f"0x{ip:x}\n" for ip in self.addresses())


def map_to_instructions(indices: np.ndarray, trace: MemoryTrace,
                        symbols: list[SymbolRange]) -> LeakageReport:
    """Attribute flagged record indices of one trace to functions."""
    report = LeakageReport()
    report.add_trace(indices, trace, symbols)
    return report


def localize_traces(model: AttackModel, side_traces: list[SideChannelTrace],
                    memory_traces: list[MemoryTrace], symbols: list[SymbolRange],
                    shape: MatrixShape | tuple, k: int | None = None) -> LeakageReport:
    """Full localization pass over aligned traces.

    Folds and normalizes each side-channel trace with the model's training
    statistics, flags the top-k records per trace and aggregates one
    report. ``k=None`` applies the per-trace default budget.
    """
    if len(side_traces) != len(memory_traces):
        raise DataFormatError("side traces and memory traces must pair up")
    shape = as_shape(shape)
    report = LeakageReport()
    for side, mem in zip(side_traces, memory_traces):
        if not side.aligned:
            raise UnalignedTraceError(
                "trace records do not correspond 1:1 to instructions; "
                "localization needs an aligned scalar-channel trace"
            )
        if len(side.values) != len(mem):
            raise DataFormatError("side-channel trace length differs from source")
        matrix = fold(side.values, shape)
        if model.norm_stats is not None:
            matrix = apply_norm(matrix, model.norm_stats)
        weights = attention_map(model, matrix)
        budget = default_topk(matrix.valid_len) if k is None else k
        report.add_trace(rank_records(weights, budget), mem, symbols)
    return report
