"""Memory access traces and the side channels derived from them.

A memory trace is the ordered sequence of (instruction address, data address)
pairs a victim program performs. An observer at some microarchitectural
vantage point does not see full addresses; it sees a lossy view per access:

* cache bank index: address >> 2
* cache line index: address >> 6
* page table entry: address & ~4095

Deriving a side channel keeps one value per access, in order. Consecutive
identical accesses are all preserved: repetition count is part of the signal,
so nothing is deduplicated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DataFormatError

_U64_MAX = 2**64 - 1


class MemoryAccessRecord(NamedTuple):
    instruction_address: int
    data_address: int


@dataclass
class MemoryTrace:
    """Ordered memory accesses, stored as parallel uint64 arrays."""

    instruction_addresses: np.ndarray
    data_addresses: np.ndarray
    source: str | None = None

    def __post_init__(self):
        self.instruction_addresses = np.asarray(self.instruction_addresses, dtype=np.uint64)
        self.data_addresses = np.asarray(self.data_addresses, dtype=np.uint64)
        if self.instruction_addresses.shape != self.data_addresses.shape:
            raise DataFormatError(
                "instruction and data address arrays must have equal length, "
                f"got {self.instruction_addresses.shape} vs {self.data_addresses.shape}"
            )
        if self.instruction_addresses.ndim != 1:
            raise DataFormatError("address arrays must be one-dimensional")

    def __len__(self) -> int:
        return int(self.instruction_addresses.shape[0])

    def __getitem__(self, i: int) -> MemoryAccessRecord:
        return MemoryAccessRecord(
            int(self.instruction_addresses[i]), int(self.data_addresses[i])
        )

    def __iter__(self) -> Iterator[MemoryAccessRecord]:
        for ip, addr in zip(self.instruction_addresses, self.data_addresses):
            yield MemoryAccessRecord(int(ip), int(addr))


@dataclass(frozen=True)
class ChannelKind:
    """A derivation rule: either a right shift or an address mask.

    Exactly one of ``shift`` and ``mask`` is set. ``mask`` is the low-bit
    mask that gets cleared (pagetable keeps addr & ~mask).
    """

    name: str
    shift: int | None = None
    mask: int | None = None

    def __post_init__(self):
        if (self.shift is None) == (self.mask is None):
            raise DataFormatError(f"channel kind {self.name!r} needs a shift or a mask, not both")
        if self.shift is not None and not 0 <= self.shift < 64:
            raise DataFormatError(f"shift must be in [0, 64), got {self.shift}")
        if self.mask is not None and (self.mask < 0 or (self.mask + 1) & self.mask):
            raise DataFormatError(f"mask must be one below a power of two, got {self.mask}")

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.uint64)
        if self.shift is not None:
            return values >> np.uint64(self.shift)
        return values & np.uint64(_U64_MAX ^ self.mask)

    def header_token(self) -> str:
        if self.name in DEFAULT_KINDS and DEFAULT_KINDS[self.name] == self:
            return f"kind={self.name}"
        param = f"shift={self.shift}" if self.shift is not None else f"mask={self.mask}"
        return f"kind={self.name} {param}"


CACHE_BANK = ChannelKind("cachebank", shift=2)
CACHE_LINE = ChannelKind("cacheline", shift=6)
PAGE_TABLE = ChannelKind("pagetable", mask=4095)

DEFAULT_KINDS = {k.name: k for k in (CACHE_BANK, CACHE_LINE, PAGE_TABLE)}


def channel_kind(name: str, shift: int | None = None, mask: int | None = None) -> ChannelKind:
    """Look up a channel kind by name, optionally overriding its parameter."""
    if name not in DEFAULT_KINDS:
        raise DataFormatError(
            f"unknown channel kind {name!r}, expected one of {sorted(DEFAULT_KINDS)}"
        )
    base = DEFAULT_KINDS[name]
    if shift is None and mask is None:
        return base
    return ChannelKind(name, shift=shift, mask=mask)


@dataclass
class SideChannelTrace:
    """One derived observation per access, same order as the memory trace.

    ``aligned`` records whether index i still corresponds to access i of a
    memory trace (true for derived scalar traces, false for anything that
    went through a cache simulation).
    """

    kind: ChannelKind
    values: np.ndarray
    aligned: bool = True
    source: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint64)

    def __len__(self) -> int:
        return int(self.values.shape[0])


def derive_side_channel(trace: MemoryTrace, kind: ChannelKind) -> SideChannelTrace:
    """Project a memory trace through one observer model.

    Length- and order-preserving: record i of the result is derived from
    access i of the input.
    """
    return SideChannelTrace(
        kind=kind,
        values=kind.apply(trace.data_addresses),
        aligned=True,
        source=trace.source,
    )


def _parse_address(token: str, lineno: int, what: str) -> int:
    try:
        value = int(token, 16)
    except ValueError:
        raise DataFormatError(f"line {lineno}: {what} {token!r} is not a hex address") from None
    if not 0 <= value <= _U64_MAX:
        raise DataFormatError(f"line {lineno}: {what} {token!r} out of uint64 range")
    return value


def parse_memory_trace(text: str, source: str | None = None) -> MemoryTrace:
    """Parse the on-disk trace format.

    One access per line as ``<ip_hex> <addr_hex>`` (0x prefixes optional).
    ``#`` starts a comment; blank lines are skipped. Malformed lines raise
    DataFormatError naming the 1-based line number.
    """
    ips: list[int] = []
    addrs: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataFormatError(
                f"line {lineno}: expected '<ip_hex> <addr_hex>', got {raw.strip()!r}"
            )
        ips.append(_parse_address(parts[0], lineno, "instruction address"))
        addrs.append(_parse_address(parts[1], lineno, "data address"))
    if not ips:
        where = f" in {source}" if source else ""
        raise DataFormatError(f"no access records{where}")
    return MemoryTrace(np.array(ips, dtype=np.uint64), np.array(addrs, dtype=np.uint64), source)


def format_memory_trace(trace: MemoryTrace) -> str:
    lines = [f"{ip:#x} {addr:#x}" for ip, addr in trace]
    return "\n".join(lines) + "\n"


def format_side_channel(trace: SideChannelTrace) -> str:
    lines = [trace.kind.header_token()]
    lines.extend(str(int(v)) for v in trace.values)
    return "\n".join(lines) + "\n"


def parse_side_channel(text: str, source: str | None = None) -> SideChannelTrace:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("kind="):
        raise DataFormatError("side channel file must start with a 'kind=<name>' header")
    head = lines[0].split()
    name = head[0][len("kind="):]
    shift = mask = None
    for tok in head[1:]:
        key, _, val = tok.partition("=")
        if key == "shift":
            shift = int(val)
        elif key == "mask":
            mask = int(val)
        else:
            raise DataFormatError(f"unknown header token {tok!r}")
    kind = channel_kind(name, shift=shift, mask=mask)
    values = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        try:
            values.append(int(line))
        except ValueError:
            raise DataFormatError(f"line {lineno}: {line!r} is not a decimal index") from None
    return SideChannelTrace(kind=kind, values=np.array(values, dtype=np.uint64), source=source)
