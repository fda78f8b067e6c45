"""
Reconstructing secret images from cache lines
=============================================

End-to-end attack at desk scale: generate a corpus of secret images, run
the table-lookup victim on each, train the autoencoder on the traces, and
reconstruct images the model never saw. Takes about a minute.
"""

import numpy as np

from scabench import (
    CACHE_LINE, DatasetManifest, ModelSpec, TrainConfig, apply_norm,
    derive_side_channel, evaluate, fit_norm, fold, gen_dataset, reconstruct,
    train,
)

# 1. corpus: 8x8 images from a 4-factor family, one victim run each
manifest = DatasetManifest(victim="lookup", n_train=192, n_test=32,
                           height=8, width=8, seed=7)
ds = gen_dataset(manifest)
print(f"dataset: {len(ds.train_idx)} train / {len(ds.test_idx)} test, "
      f"traces of {len(ds.traces[0])} records")

# 2. encode every trace: cache-line channel, fold square, normalize with
#    statistics from the training split only
side = [derive_side_channel(t, CACHE_LINE) for t in ds.traces]
norm = fit_norm([side[i] for i in ds.train_idx])
shape = (1, 23)
stacked = np.stack([apply_norm(fold(s.values, shape), norm).data
                    for s in side])

# 3. a small model: two conv blocks with an attention pair, latent 16
spec = ModelSpec(matrix_shape=shape, modality="continuous",
                 conv_channels=(8, 16), conv_strides=(1, 2),
                 attention_after=(0,), latent_dim=16, out_hw=(8, 8),
                 dec_channels=(16, 8), n_classes=4)
cfg = TrainConfig(epochs=30, batch_size=32, seed=0)
train_images = np.stack([ds.samples[i].image for i in ds.train_idx])
model, history = train(stacked[ds.train_idx], train_images,
                       ds.labels[ds.train_idx], spec, cfg)
print(f"trained {cfg.epochs} epochs, reconstruction loss "
      f"{history[0][1]:.4f} -> {history[-1][1]:.4f}")

# 4. reconstruct the held-out images and compare against the dumbest
#    competitor: always predicting the mean training image
recons = reconstruct(model, stacked[ds.test_idx])
refs = [ds.samples[i] for i in ds.test_idx]
mse = evaluate(recons, refs, "mse")
mean_image = train_images.mean(axis=0)
base = np.mean([((mean_image - ds.samples[i].image) ** 2).mean()
                for i in ds.test_idx])
print(f"test MSE {mse.mean():.5f} vs mean-image baseline {base:.5f} "
      f"({mse.mean() / base:.2f}x)")

# 5. eyeball one pair as coarse ASCII shading
ramp = " .:-=+*#"
truth = refs[0].image
guess = recons[0].image
lo, hi = truth.min(), truth.max()


def row_art(row):
    span = (hi - lo) or 1.0
    return "".join(ramp[int(np.clip((v - lo) / span, 0, 0.999) * 8)]
                   for v in row)


print("truth    | reconstruction")
for t_row, g_row in zip(truth, guess):
    print(f"{row_art(t_row)} | {row_art(g_row)}")

# CLI equivalent:
#   scabench gen --victim lookup --height 8 --width 8 --n-train 192 --n-test 32 --out ds/
#   scabench train --dataset ds/ --channel cacheline --k 1 --n 23 --epochs 30 --out model/
#   scabench attack --dataset ds/ --model model/ --outdir attack/
