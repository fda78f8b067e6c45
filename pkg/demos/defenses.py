"""
Two defenses: perception blinding and trace noise
=================================================

Blinding protects the user without touching the victim binary: blend the
private input with a public mask before processing, then subtract the
mask's contribution from the output. The attacker reconstructs the mask;
the user loses nothing. Noise injection instead perturbs what the spy
captures. This walk measures both against the image attack.
"""

import numpy as np

from scabench import (
    CACHE_LINE, BlindConfig, DatasetManifest, MediaSample, ModelSpec,
    NOISE_PRESETS, TrainConfig, apply_noise, apply_norm, blind_continuous,
    derive_side_channel, fit_norm, fold, gen_dataset, preset_scheme,
    reconstruct, sample_continuous, train, unblind_output,
)
from scabench.utils import substream

# 1. train the attack exactly like the image attack demo
manifest = DatasetManifest(victim="lookup", n_train=192, n_test=32,
                           height=8, width=8, seed=7)
ds = gen_dataset(manifest)
side = [derive_side_channel(t, CACHE_LINE) for t in ds.traces]
norm = fit_norm([side[i] for i in ds.train_idx])
shape = (1, 23)
stacked = np.stack([apply_norm(fold(s.values, shape), norm).data
                    for s in side])
spec = ModelSpec(matrix_shape=shape, modality="continuous",
                 conv_channels=(8, 16), conv_strides=(1, 2),
                 attention_after=(0,), latent_dim=16, out_hw=(8, 8),
                 dec_channels=(16, 8), n_classes=4)
cfg = TrainConfig(epochs=30, batch_size=32, seed=0)
train_images = np.stack([ds.samples[i].image for i in ds.train_idx])
model, _ = train(stacked[ds.train_idx], train_images,
                 ds.labels[ds.train_idx], spec, cfg)

recons = reconstruct(model, stacked[ds.test_idx])
plain_mse = float(np.mean([((r.image - ds.samples[i].image) ** 2).mean()
                           for r, i in zip(recons, ds.test_idx)]))
print(f"attack on unprotected traces: MSE {plain_mse:.5f}")

# 2. perception blinding: every sample is blended 10% private / 90% mask
#    before the victim runs, so the trace describes mostly the mask
mask_sample, _, _ = sample_continuous(substream(1, "mask"),
                                      height=8, width=8)
blind_cfg = BlindConfig(alpha=0.1, mask=mask_sample)
mask_out = ds.victim.public_output(mask_sample)

to_private, to_mask, recovery = [], [], []
for i in ds.test_idx:
    sample = ds.samples[i]
    blended = MediaSample.continuous(blind_continuous(sample.image, blind_cfg))
    trace_b, out_b = ds.victim.run(blended)
    mat = apply_norm(fold(derive_side_channel(trace_b, CACHE_LINE).values,
                          shape), norm)
    recon = reconstruct(model, mat.data[None])[0]
    to_private.append(((recon.image - sample.image) ** 2).mean())
    to_mask.append(((recon.image - mask_sample.image) ** 2).mean())
    recovered = unblind_output(out_b.image, mask_out.image, blind_cfg.alpha)
    recovery.append(np.max(np.abs(recovered - ds.outputs[i].image)))

print(f"attack on blinded traces:     MSE {np.mean(to_private):.5f} "
      f"({np.mean(to_private) / plain_mse:.1f}x worse)")
print(f"reconstructions closer to the mask than the secret: "
      f"{np.mean(np.array(to_mask) < np.array(to_private)):.0%}")
print(f"user's recovered output, worst abs error: {max(recovery):.2e}")

# 3. trace noise: perturb every capture, retrain, remeasure. The spy
#    fights through it (conv features shift with the records), but pays
print(f"\nnoise presets: {sorted(NOISE_PRESETS)}")
for name in ("gaussian-low", "gaussian-high"):
    scheme = preset_scheme(name, seed=0)
    noisy = [apply_noise(s, scheme) for s in side]
    norm_n = fit_norm([noisy[i] for i in ds.train_idx])
    stacked_n = np.stack([apply_norm(fold(s.values, shape), norm_n).data
                          for s in noisy])
    model_n, _ = train(stacked_n[ds.train_idx], train_images,
                       ds.labels[ds.train_idx], spec, cfg)
    recons_n = reconstruct(model_n, stacked_n[ds.test_idx])
    mse_n = float(np.mean([((r.image - ds.samples[i].image) ** 2).mean()
                           for r, i in zip(recons_n, ds.test_idx)]))
    print(f"   {name:14s} attack MSE {mse_n:.5f} "
          f"({mse_n / plain_mse:.2f}x the clean attack)")

# CLI equivalent:
#   scabench defend --dataset ds/ --model model/ --mode blind --alpha 0.1 --outdir blind/
#   scabench defend --dataset ds/ --model model/ --mode noise --preset gaussian-low --outdir noise/
