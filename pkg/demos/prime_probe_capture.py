"""
Watching a victim through Prime+Probe
=====================================

The second observer model needs no privileged tracer: the spy fills each
cache set with its own lines, lets the victim run for an epoch, then
probes which sets got evicted. Each epoch yields one bit per cache set.
This walk captures a sentence-checking victim and shows the bit records,
then cross-checks the simulator against an independent oracle.
"""

import numpy as np

from scabench import (
    CacheConfig, HashCheckVictim, capture_pp, encode_pp, reference_oracle,
    sample_sentence, simulate_prime_probe,
)
from scabench.utils import substream

# 1. the victim hashes each word of a secret sentence into a bucket and
#    probes it; which buckets light up betrays the words
victim = HashCheckVictim(vocab_size=32)
sample, template = sample_sentence(substream(0, "demo"), vocab_size=32)
trace, _ = victim.run(sample)
print(f"sentence tokens {sample.tokens.tolist()} (template {template})")
print(f"victim run: {len(trace)} accesses")

# 2. a 64-set, 8-way cache probed every 2 victim accesses
config = CacheConfig(num_sets=64, ways=8, line_size=64, epoch_len=2)
pp = capture_pp(trace, config)
print(f"captured {len(pp.vectors)} probe epochs of {config.num_sets} bits")

# 3. activity vectors are sparse; show the sets that fired per epoch
for i, vec in enumerate(pp.vectors[:6]):
    sets = np.flatnonzero(vec.bits)
    print(f"   epoch {i}: sets {sets.tolist()}")

# 4. the cache simulator is the subtle part, so an independent oracle
#    (set arithmetic only, no LRU bookkeeping) double-checks every vector
sim = simulate_prime_probe(trace, config)
oracle = reference_oracle(trace, config)
agree = all(np.array_equal(a.bits, b.bits) for a, b in zip(sim, oracle))
print(f"simulator vs oracle on {len(sim)} vectors: "
      f"{'identical' if agree else 'MISMATCH'}")

# 5. the epochs stack into the same square matrix format scalar traces
#    use: one row per epoch, one column per cache set
matrix = encode_pp(pp.vectors, (1, config.num_sets))
print(f"matrix (1, {config.num_sets}, {config.num_sets}), "
      f"valid_len {matrix.valid_len}, ones {int(matrix.data.sum())}")

# CLI equivalent:
#   scabench gen --victim hashcheck --n 1 --out ds/
#   scabench pp --sets 64 --ways 8 --epoch-len 2 --out pp.txt ds/traces/trace_000000.txt
