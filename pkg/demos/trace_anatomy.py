"""
Anatomy of a side-channel trace
===============================

A victim program touches memory in a secret-dependent pattern. This walk
runs one bundled victim on one private input and shows each stage of what
the spy sees: the raw access trace, the scalar channels derived from the
addresses, and the square matrix the attack model actually consumes.
"""

import numpy as np

from scabench import (
    CACHE_BANK, CACHE_LINE, PAGE_TABLE, LookupVictim, derive_side_channel,
    fit_norm, fold, apply_norm, sample_continuous, unfold_index,
)
from scabench.utils import substream

# 1. one private input for the table-lookup victim: an 8x8 image whose
#    pixel values drive which table rows get touched
victim = LookupVictim(height=8, width=8, levels=8)
sample, _, _ = sample_continuous(substream(0, "demo"), height=8, width=8)
trace, public = victim.run(sample)
print(f"victim run: {len(trace)} memory accesses, "
      f"public output {public.image.shape}")

# 2. the raw record is (instruction address, data address); the secret
#    only influences the data side
print("first records (ip, addr):")
for ip, addr in list(trace)[:3]:
    print(f"   {ip:#x}  {addr:#x}")

# 3. a spy cannot read addresses exactly; it sees which cache unit each
#    access lands in. The three modeled channels are plain bit arithmetic
addr = int(trace.data_addresses[0])
print(f"derivations for {addr:#x}: "
      f"bank {addr >> 2}, line {addr >> 6}, page {addr & ~4095}")
for kind in (CACHE_BANK, CACHE_LINE, PAGE_TABLE):
    side = derive_side_channel(trace, kind)
    print(f"   {kind.name:10s} first values {side.values[:4]}")

# 4. the trace is one long vector; the model wants a square image. fold
#    wraps it row by row into K stacked N x N planes with zero padding
side = derive_side_channel(trace, CACHE_LINE)
n = int(np.ceil(np.sqrt(len(side.values))))
matrix = fold(side.values, (1, n))
print(f"folded {len(side.values)} records into (1, {n}, {n}), "
      f"valid_len {matrix.valid_len}")

# 5. fold is lossless: unfold_index maps any matrix cell back to its
#    position in the trace, padding cells map to nothing
cell = (0, 1, 2)
back = unfold_index(cell, matrix.shape, matrix.valid_len)
print(f"cell {cell} holds record {back}; "
      f"roundtrip ok: {matrix.data[cell] == float(side.values[back])}")

# 6. training normalizes values into [0, 1] with statistics fitted on the
#    training split only; the matrix keeps its layout
norm = fit_norm([side])
ready = apply_norm(matrix, norm)
print(f"normalized range [{ready.data.min():.3f}, {ready.data.max():.3f}]")

# CLI equivalent:
#   scabench gen --victim lookup --height 8 --width 8 --n 1 --out ds/
#   scabench derive --kind cacheline --out side.txt ds/traces/trace_000000.txt
#   scabench fold --k 1 --n 23 --out matrix.txt side.txt
