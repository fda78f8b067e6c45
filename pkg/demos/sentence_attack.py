"""
Recovering secret sentences from probe bits
===========================================

Same attack, different modality: the victim checks each word of a secret
sentence against a hash table, the spy watches cache sets via Prime+Probe,
and a sequence decoder reads whole sentences back out of the bit matrix.
Takes about half a minute.
"""

import numpy as np

from scabench import (
    CacheConfig, DatasetManifest, ModelSpec, TrainConfig, capture_pp,
    encode_pp, evaluate, gen_dataset, reconstruct, train,
)

# 1. corpus of sentences over a 32-word vocabulary, trace per sentence
manifest = DatasetManifest(victim="hashcheck", n_train=256, n_test=32, seed=7)
ds = gen_dataset(manifest)
print(f"dataset: {len(ds.train_idx)} train / {len(ds.test_idx)} test")

# 2. Prime+Probe capture, one 64-bit vector per 2 victim accesses,
#    stacked row by row into a 64x64 bit matrix
config = CacheConfig(num_sets=64, ways=8, line_size=64, epoch_len=2)
pp = [capture_pp(t, config) for t in ds.traces]
stacked = np.stack([encode_pp(p.vectors, (1, 64)).data for p in pp])
print(f"encoded {stacked.shape[0]} traces as (1, 64, 64) bit matrices")

# 3. the decoder side is a GRU that emits one word id per step
spec = ModelSpec(matrix_shape=(1, 64), modality="tokens",
                 conv_channels=(8, 16), conv_strides=(2, 2),
                 attention_after=(0,), latent_dim=32, vocab_size=34,
                 embed_dim=16, gru_hidden=64, max_words=12)
cfg = TrainConfig(epochs=40, batch_size=64, lr=1e-3, seed=0)
tokens_train = [ds.samples[i].tokens for i in ds.train_idx]
model, history = train(stacked[ds.train_idx], tokens_train,
                       ds.labels[ds.train_idx], spec, cfg)
print(f"trained {cfg.epochs} epochs, token loss "
      f"{history[0][1]:.3f} -> {history[-1][1]:.3f}")

# 4. decode held-out traces and score word-for-word accuracy against a
#    uniform random guesser
recons = reconstruct(model, stacked[ds.test_idx])
refs = [ds.samples[i] for i in ds.test_idx]
acc = evaluate(recons, refs, "word_accuracy")
print(f"word accuracy {acc.mean():.3f} vs random {1 / 32:.3f} "
      f"({acc.mean() * 32:.1f}x)")


def words(sample):
    return " ".join(f"w{int(t):02d}" for t in sample.content_tokens())


print("decoded samples:")
for r, ref in list(zip(recons, refs))[:4]:
    print(f"   truth: {words(ref):35s} got: {words(r)}")

# CLI equivalent:
#   scabench gen --victim hashcheck --n-train 256 --n-test 32 --out ds/
#   scabench train --dataset ds/ --pp --sets 64 --epoch-len 2 --k 1 --n 64 \
#       --epochs 40 --lr 1e-3 --out model/
#   scabench attack --dataset ds/ --model model/ --outdir attack/
