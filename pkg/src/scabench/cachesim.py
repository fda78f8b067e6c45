"""Prime+Probe capture against a simulated set-associative LRU cache.

The spy primes every way of every cache set, lets the victim execute a fixed
number of accesses (one epoch), then probes: a set where any spy line went
missing must have been touched by the victim, which sets that set's bit in
the epoch's activity vector. Probing restores the primed state, so every
epoch starts from a fully spy-owned cache. An epoch whose vector is all
zeros emits nothing.

Two implementations are kept deliberately separate: ``simulate_prime_probe``
(keeps per-set occupancy lazily, exploiting that untouched sets stay fully
primed) and ``reference_oracle`` (materializes every set's occupancy list
each epoch and scans for missing spy lines). They must agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .traces import MemoryTrace


@dataclass(frozen=True)
class CacheConfig:
    num_sets: int = 64
    ways: int = 8
    line_size: int = 64
    epoch_len: int = 4

    def __post_init__(self):
        if self.num_sets < 1 or self.ways < 1 or self.line_size < 1 or self.epoch_len < 1:
            raise DataFormatError(f"cache config fields must be positive: {self}")


@dataclass
class ActivityVector:
    """One bit per cache set: 1 means the victim touched it this epoch."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)

    def any(self) -> bool:
        return bool(self.bits.any())

    def __len__(self) -> int:
        return int(self.bits.shape[0])


@dataclass
class PPTrace:
    """Concatenated activity vectors from ``repeats`` identical captures."""

    vectors: list[ActivityVector]
    config: CacheConfig
    repeats: int = 1

    def flat_bits(self) -> np.ndarray:
        if not self.vectors:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate([v.bits for v in self.vectors])

    def __len__(self) -> int:
        return len(self.vectors)


def _epochs(trace: MemoryTrace, epoch_len: int):
    addrs = trace.data_addresses
    for start in range(0, len(addrs), epoch_len):
        yield addrs[start : start + epoch_len]


def simulate_prime_probe(trace: MemoryTrace, config: CacheConfig) -> list[ActivityVector]:
    """Run the capture protocol and return the emitted activity vectors.

    Per-set state during an epoch holds only victim lines plus a count of
    surviving spy lines; the prime puts every spy line in before any victim
    line, so the LRU victim of a miss is a spy line until none remain.
    """
    s = config.num_sets
    w = config.ways
    line_size = config.line_size
    out: list[ActivityVector] = []
    for chunk in _epochs(trace, config.epoch_len):
        victim_lines: dict[int, list[int]] = {}
        spy_left: dict[int, int] = {}
        for addr in chunk:
            line = int(addr) // line_size
            set_idx = line % s
            lines = victim_lines.get(set_idx)
            if lines is None:
                lines = []
                victim_lines[set_idx] = lines
                spy_left[set_idx] = w
            if line in lines:
                lines.remove(line)
                lines.append(line)
                continue
            if spy_left[set_idx] > 0:
                spy_left[set_idx] -= 1
            else:
                lines.pop(0)
            lines.append(line)
        bits = np.zeros(s, dtype=np.uint8)
        for set_idx, left in spy_left.items():
            if left < w:
                bits[set_idx] = 1
        if bits.any():
            out.append(ActivityVector(bits))
    return out


_SPY = object()


def reference_oracle(trace: MemoryTrace, config: CacheConfig) -> list[ActivityVector]:
    """Brute-force capture: full occupancy lists, scanned every probe."""
    s = config.num_sets
    w = config.ways
    out: list[ActivityVector] = []
    for chunk in _epochs(trace, config.epoch_len):
        # Prime: every way of every set holds a distinct spy line.
        occupancy = [[(_SPY, j) for j in range(w)] for _ in range(s)]
        # Victim epoch: plain LRU, index 0 is least recently used.
        for addr in chunk:
            line = int(addr) // config.line_size
            set_idx = line % s
            entry = ("victim", line)
            bucket = occupancy[set_idx]
            if entry in bucket:
                bucket.remove(entry)
                bucket.append(entry)
            else:
                bucket.pop(0)
                bucket.append(entry)
        # Probe: the spy re-touches its lines; any miss flags the set.
        bits = np.zeros(s, dtype=np.uint8)
        for set_idx in range(s):
            spies_present = sum(1 for e in occupancy[set_idx] if e[0] is _SPY)
            if spies_present < w:
                bits[set_idx] = 1
        if bits.any():
            out.append(ActivityVector(bits))
    return out


def capture_pp(trace: MemoryTrace, config: CacheConfig, repeats: int = 1) -> PPTrace:
    """Capture the victim ``repeats`` times and concatenate the vectors.

    The cache is re-primed from scratch for every capture, so repeats of a
    deterministic victim produce identical segments.
    """
    if repeats < 1:
        raise DataFormatError(f"repeats must be >= 1, got {repeats}")
    vectors: list[ActivityVector] = []
    for _ in range(repeats):
        vectors.extend(simulate_prime_probe(trace, config))
    return PPTrace(vectors=vectors, config=config, repeats=repeats)


def format_pp_trace(pp: PPTrace) -> str:
    lines = [f"{pp.config.num_sets} {pp.repeats}"]
    for v in pp.vectors:
        lines.append("".join("1" if b else "0" for b in v.bits))
    return "\n".join(lines) + "\n"


def parse_pp_trace(text: str) -> PPTrace:
    lines = [l.strip() for l in text.splitlines() if l.strip()]
    if not lines:
        raise DataFormatError("Prime+Probe file needs an 'S t' header")
    head = lines[0].split()
    if len(head) != 2:
        raise DataFormatError(f"bad Prime+Probe header {lines[0]!r}")
    try:
        num_sets, repeats = int(head[0]), int(head[1])
    except ValueError:
        raise DataFormatError(f"bad Prime+Probe header {lines[0]!r}") from None
    vectors = []
    for lineno, row in enumerate(lines[1:], start=2):
        if len(row) != num_sets or set(row) - {"0", "1"}:
            raise DataFormatError(f"line {lineno}: expected {num_sets} bits of 0/1")
        vectors.append(ActivityVector(np.frombuffer(row.encode(), dtype=np.uint8) - ord("0")))
    return PPTrace(vectors=vectors, config=CacheConfig(num_sets=num_sets), repeats=repeats)
