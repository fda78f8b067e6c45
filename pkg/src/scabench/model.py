"""The trace-to-media reconstruction model and its training loops.

An encoder maps a folded trace matrix to a latent vector. Attention pairs
(channel gate, then spatial gate) sit between the convolution stages so the
network learns which trace regions carry secret-dependent signal; the
spatial maps double as the localization primitive. Continuous media come
back through a convolutional decoder trained with a composite objective

    lambda * explicit reconstruction error
    + non-saturating adversarial term from a discriminator's realism head
    + cross entropy of the discriminator's privacy head,

with lambda = 50. Token sequences come back through a single-cell gated
recurrent decoder trained with plain cross entropy. Optimization is Adam
at learning rate 2e-4, batch size 64, no dropout, no early stopping.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import DataFormatError, TrainingDiverged
from .folding import MatrixShape, NormStats, as_shape
from .utils import substream
from .victims import EOS_ID, FIRST_WORD_ID, SOS_ID, MediaSample


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; everything needed to rebuild the network."""

    matrix_shape: tuple  # (K, N) of the folded input
    modality: str  # "continuous" | "tokens"
    conv_channels: tuple = (8, 16)
    conv_strides: tuple = (1, 2)
    attention_after: tuple = (0,)  # attention pair follows these conv indices
    attention_reduction: int = 4
    attention_kernel: int = 7
    latent_dim: int = 128
    # continuous head
    out_hw: tuple = (16, 16)
    dec_channels: tuple = (16, 8)
    n_classes: int = 4
    disc_channels: tuple = (8, 16)
    # sequence head
    vocab_size: int = 34
    embed_dim: int = 16
    gru_hidden: int = 64
    max_words: int = 12

    def __post_init__(self):
        if self.modality not in ("continuous", "tokens"):
            raise DataFormatError(f"unknown modality {self.modality!r}")
        if len(self.conv_channels) != len(self.conv_strides):
            raise DataFormatError("conv_channels and conv_strides must pair up")

    def to_meta(self) -> dict:
        return asdict(self)

    @classmethod
    def from_meta(cls, meta: dict) -> "ModelSpec":
        fixed = dict(meta)
        for key in ("matrix_shape", "conv_channels", "conv_strides", "attention_after",
                    "out_hw", "dec_channels", "disc_channels"):
            fixed[key] = tuple(fixed[key])
        return cls(**fixed)


def _conv_out(size: int, stride: int) -> int:
    # kernel 3, pad 1
    return (size + 2 - 3) // stride + 1


class Encoder:
    """Conv/attention stack ending in a fully connected latent projection."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        shape = as_shape(spec.matrix_shape)
        layers: list[nn.Layer] = []
        self.spatial_layers: list[nn.SpatialAttention] = []
        in_ch, size = shape.channels, shape.n
        for i, (out_ch, stride) in enumerate(zip(spec.conv_channels, spec.conv_strides)):
            layers.append(nn.Conv2D(in_ch, out_ch, 3, stride=stride, pad=1, rng=rng))
            layers.append(nn.ReLU())
            size = _conv_out(size, stride)
            if i in spec.attention_after:
                layers.append(nn.ChannelAttention(out_ch, spec.attention_reduction, rng=rng))
                spatial = nn.SpatialAttention(spec.attention_kernel, rng=rng)
                layers.append(spatial)
                self.spatial_layers.append(spatial)
            in_ch = out_ch
        layers.append(nn.Flatten())
        layers.append(nn.FullyConnected(in_ch * size * size, spec.latent_dim, rng=rng))
        self.net = nn.Sequential(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x)

    def backward(self, dz: np.ndarray) -> np.ndarray:
        return self.net.backward(dz)

    def named_parameters(self, prefix: str = "encoder."):
        yield from self.net.named_parameters(prefix)

    def spatial_maps(self) -> list[np.ndarray]:
        """Spatial attention maps of the latest forward pass, earliest first."""
        if not self.spatial_layers:
            raise DataFormatError("encoder has no spatial attention layers")
        return [s.last_map for s in self.spatial_layers]


class ContinuousDecoder:
    """Latent to image: FC, then upsample/conv stages, sigmoid output."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        h, w = spec.out_hw
        ups = len(spec.dec_channels) - 1
        if h % (1 << ups) or w % (1 << ups):
            raise DataFormatError(f"output {spec.out_hw} not divisible by 2^{ups}")
        bh, bw = h >> ups, w >> ups
        c0 = spec.dec_channels[0]
        layers: list[nn.Layer] = [
            nn.FullyConnected(spec.latent_dim, c0 * bh * bw, rng=rng),
            nn.Reshape((c0, bh, bw)),
            nn.ReLU(),
        ]
        in_ch = c0
        for out_ch in spec.dec_channels[1:]:
            layers += [
                nn.NearestUpsample(2),
                nn.Conv2D(in_ch, out_ch, 3, stride=1, pad=1, rng=rng),
                nn.ReLU(),
            ]
            in_ch = out_ch
        layers += [nn.Conv2D(in_ch, 1, 3, stride=1, pad=1, rng=rng), nn.Sigmoid()]
        self.net = nn.Sequential(layers)

    def forward(self, z: np.ndarray) -> np.ndarray:
        return self.net.forward(z)[:, 0, :, :]

    def backward(self, dimg: np.ndarray) -> np.ndarray:
        return self.net.backward(dimg[:, None, :, :])

    def named_parameters(self, prefix: str = "decoder."):
        yield from self.net.named_parameters(prefix)


class SequenceDecoder:
    """Latent-conditioned greedy sequence decoder.

    The latent initializes the hidden state through a tanh projection; each
    step embeds the previous token, advances one gated recurrent cell and
    projects onto the vocabulary. Argmax decoding, ties to the lowest id.
    """

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        self.fc_init = nn.FullyConnected(spec.latent_dim, spec.gru_hidden, rng=rng)
        self.embed = nn.Embedding(spec.vocab_size, spec.embed_dim, rng=rng)
        self.cell = nn.GRUCell(spec.embed_dim, spec.gru_hidden, rng=rng)
        self.fc_out = nn.FullyConnected(spec.gru_hidden, spec.vocab_size, rng=rng)

    def named_parameters(self, prefix: str = "seqdec."):
        yield from self.fc_init.named_parameters(prefix + "init.")
        yield from self.embed.named_parameters(prefix + "embed.")
        yield from self.cell.named_parameters(prefix + "cell.")
        yield from self.fc_out.named_parameters(prefix + "out.")

    def _init_state(self, z: np.ndarray):
        pre = self.fc_init.forward(z)
        return np.tanh(pre)

    def teacher_loss(self, z: np.ndarray, token_seqs: list[np.ndarray]):
        """Teacher-forced cross entropy; returns (loss, grad wrt z)."""
        b = len(token_seqs)
        steps = max(len(t) - 1 for t in token_seqs)
        inputs = np.zeros((b, steps), dtype=np.int64)
        targets = np.zeros((b, steps), dtype=np.int64)
        weights = np.zeros((b, steps), dtype=np.float64)
        for i, toks in enumerate(token_seqs):
            n = len(toks) - 1
            inputs[i, :n] = toks[:-1]
            targets[i, :n] = toks[1:]
            weights[i, :n] = 1.0
        h = self._init_state(z)
        h0 = h
        caches = []
        states = []
        for t in range(steps):
            e = self.embed.forward(inputs[:, t])
            h, cache = self.cell.step(e, h)
            caches.append(cache)
            states.append(h)
        hs = np.stack(states, axis=1)  # (B, T, hidden)
        logits = self.fc_out.forward(hs.reshape(b * steps, -1)).reshape(
            b, steps, self.spec.vocab_size
        )
        loss, dlogits = nn.softmax_cross_entropy(logits, targets, weights)
        dhs = self.fc_out.backward(
            dlogits.reshape(b * steps, self.spec.vocab_size)
        ).reshape(b, steps, -1)
        dh = np.zeros_like(h)
        for t in reversed(range(steps)):
            dh = dh + dhs[:, t, :]
            de, dh = self.cell.backward_step(dh, caches[t])
            self.embed.forward(inputs[:, t])  # restore cache for backward
            self.embed.backward(de)
        dpre = dh * (1.0 - h0 * h0)
        dz = self.fc_init.backward(dpre)
        return loss, dz

    def greedy(self, z: np.ndarray, max_words: int | None = None) -> list[np.ndarray]:
        """Decode each latent row; sequences come back SOS/EOS framed."""
        limit = max_words if max_words is not None else self.spec.max_words
        b = z.shape[0]
        h = self._init_state(z)
        prev = np.full(b, SOS_ID, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        rows: list[list[int]] = [[SOS_ID] for _ in range(b)]
        for _ in range(limit):
            e = self.embed.forward(prev)
            h, _ = self.cell.step(e, h)
            logits = self.fc_out.forward(h)
            logits[:, SOS_ID] = -np.inf  # a sentence never restarts
            nxt = logits.argmax(axis=1)
            for i in range(b):
                if not done[i]:
                    if nxt[i] == EOS_ID:
                        done[i] = True
                    else:
                        rows[i].append(int(nxt[i]))
            if done.all():
                break
            prev = np.where(done, EOS_ID, nxt)
        return [np.array(r + [EOS_ID], dtype=np.int64) for r in rows]


class Discriminator:
    """Shared conv trunk with a realism head and a privacy head."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        h, w = spec.out_hw
        layers: list[nn.Layer] = []
        in_ch = 1
        size_h, size_w = h, w
        for out_ch in spec.disc_channels:
            layers.append(nn.Conv2D(in_ch, out_ch, 3, stride=2, pad=1, rng=rng))
            layers.append(nn.ReLU())
            size_h = _conv_out(size_h, 2)
            size_w = _conv_out(size_w, 2)
            in_ch = out_ch
        layers.append(nn.Flatten())
        self.trunk = nn.Sequential(layers)
        flat = in_ch * size_h * size_w
        self.head_real = nn.FullyConnected(flat, 1, rng=rng)
        self.head_priv = nn.FullyConnected(flat, spec.n_classes, rng=rng)

    def named_parameters(self, prefix: str = "disc."):
        yield from self.trunk.named_parameters(prefix + "trunk.")
        yield from self.head_real.named_parameters(prefix + "real.")
        yield from self.head_priv.named_parameters(prefix + "priv.")

    def forward(self, images: np.ndarray):
        """images (B, H, W) -> (realism logits (B, 1), class logits (B, C))."""
        feats = self.trunk.forward(images[:, None, :, :])
        return self.head_real.forward(feats), self.head_priv.forward(feats)

    def backward(self, dscore: np.ndarray, dclass: np.ndarray) -> np.ndarray:
        dfeats = self.head_real.backward(dscore) + self.head_priv.backward(dclass)
        return self.trunk.backward(dfeats)[:, 0, :, :]


@dataclass
class AttackModel:
    """Bundle of the trained pieces plus the stats needed at attack time."""

    spec: ModelSpec
    encoder: Encoder
    decoder: ContinuousDecoder | None = None
    seq_decoder: SequenceDecoder | None = None
    discriminator: Discriminator | None = None
    norm_stats: NormStats | None = None

    def named_parameters(self):
        yield from self.encoder.named_parameters()
        if self.decoder is not None:
            yield from self.decoder.named_parameters()
        if self.seq_decoder is not None:
            yield from self.seq_decoder.named_parameters()
        if self.discriminator is not None:
            yield from self.discriminator.named_parameters()


def build_model(spec: ModelSpec, seed: int) -> AttackModel:
    rng = substream(seed, "init")
    encoder = Encoder(spec, rng)
    if spec.modality == "continuous":
        return AttackModel(
            spec=spec,
            encoder=encoder,
            decoder=ContinuousDecoder(spec, rng),
            discriminator=Discriminator(spec, rng),
        )
    return AttackModel(spec=spec, encoder=encoder, seq_decoder=SequenceDecoder(spec, rng))


def encode(model: AttackModel, matrices: np.ndarray) -> np.ndarray:
    return model.encoder.forward(np.asarray(matrices, dtype=np.float64))


def decode_continuous(model: AttackModel, z: np.ndarray) -> np.ndarray:
    if model.decoder is None:
        raise DataFormatError("model has no continuous decoder")
    return model.decoder.forward(z)


def decode_sequence(model: AttackModel, z: np.ndarray, max_words: int | None = None):
    if model.seq_decoder is None:
        raise DataFormatError("model has no sequence decoder")
    return model.seq_decoder.greedy(z, max_words)


def discriminate(model: AttackModel, images: np.ndarray):
    """Realism score in (0,1) and privacy class logits for a batch."""
    if model.discriminator is None:
        raise DataFormatError("model has no discriminator")
    logits, cls = model.discriminator.forward(images)
    return 1.0 / (1.0 + np.exp(-logits)), cls


def total_loss(recon: np.ndarray, ref: np.ndarray, disc: Discriminator,
               labels: np.ndarray, lam: float = 50.0, metric: str = "mse",
               implicit_weight: float = 1.0, privacy_weight: float = 1.0):
    """Composite generator objective and its gradient w.r.t. the batch of
    reconstructions. Returns (loss, grad, parts) with parts =
    (explicit, implicit, privacy). Zeroing both auxiliary weights skips
    the discriminator entirely, leaving the pure supervised objective."""
    explicit_fn = nn.mse_loss if metric == "mse" else nn.l1_loss
    l_exp, g_exp = explicit_fn(recon, ref)
    if implicit_weight == 0.0 and privacy_weight == 0.0:
        return lam * l_exp, lam * g_exp, (l_exp, 0.0, 0.0)
    scores, cls = disc.forward(recon)
    l_imp, g_score = nn.bce_with_logits(scores, 1.0)
    l_priv, g_cls = nn.softmax_cross_entropy(cls, labels)
    g_disc = disc.backward(implicit_weight * g_score, privacy_weight * g_cls)
    loss = lam * l_exp + implicit_weight * l_imp + privacy_weight * l_priv
    grad = lam * g_exp + g_disc
    return loss, grad, (l_exp, l_imp, l_priv)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 2e-4
    lam: float = 50.0
    seed: int = 0
    explicit_metric: str = "mse"  # or "l1"
    implicit_weight: float = 1.0
    privacy_weight: float = 1.0


HISTORY_FIELDS = ("epoch", "L_explicit", "L_implicit", "L_privacy", "D_loss")


def history_csv(history: list[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_FIELDS)
    for row in history:
        writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return buf.getvalue()


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def train_continuous(matrices: np.ndarray, images: np.ndarray, labels: np.ndarray,
                     spec: ModelSpec, cfg: TrainConfig) -> tuple[AttackModel, list[tuple]]:
    """Adversarial autoencoder training; one discriminator step then one
    generator step per batch. Returns the model and per-epoch history."""
    model = build_model(spec, cfg.seed)
    disc = model.discriminator
    shuffle_rng = substream(cfg.seed, "shuffle")
    opt_g = nn.Adam(
        list(model.encoder.named_parameters()) + list(model.decoder.named_parameters()),
        lr=cfg.lr,
    )
    opt_d = nn.Adam(list(disc.named_parameters()), lr=cfg.lr)
    n = matrices.shape[0]
    adversarial = cfg.implicit_weight != 0.0 or cfg.privacy_weight != 0.0
    history = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(4)
        batches = 0
        for idx in _batches(n, cfg.batch_size, shuffle_rng):
            xb = matrices[idx]
            yb = images[idx]
            lb = labels[idx]

            # Discriminator: real up, reconstructions down, classify real.
            # Only disc params move here, so the encoder/decoder caches from
            # this forward stay valid for the generator step below.
            z = model.encoder.forward(xb)
            recon = model.decoder.forward(z)
            d_loss = 0.0
            if adversarial:
                opt_d.zero_grad()
                scores_r, cls_r = disc.forward(yb)
                l_real, g_real = nn.bce_with_logits(scores_r, 1.0)
                l_cls, g_cls = nn.softmax_cross_entropy(cls_r, lb)
                disc.backward(g_real, g_cls)
                scores_f, _ = disc.forward(recon)
                l_fake, g_fake = nn.bce_with_logits(scores_f, 0.0)
                disc.backward(g_fake, np.zeros_like(cls_r))
                d_loss = l_real + l_cls + l_fake
                opt_d.step()

            # Generator: composite objective through the updated critic.
            opt_g.zero_grad()
            loss, grad, (l_exp, l_imp, l_priv) = total_loss(
                recon, yb, disc, lb, lam=cfg.lam, metric=cfg.explicit_metric,
                implicit_weight=cfg.implicit_weight,
                privacy_weight=cfg.privacy_weight,
            )
            if not np.isfinite(loss) or not np.isfinite(d_loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            dz = model.decoder.backward(grad)
            model.encoder.backward(dz)
            opt_g.step()

            sums += (l_exp, l_imp, l_priv, d_loss)
            batches += 1
        history.append((epoch, *(sums / batches)))
    return model, history


def train_sequence(matrices: np.ndarray, token_seqs: list[np.ndarray],
                   spec: ModelSpec, cfg: TrainConfig) -> tuple[AttackModel, list[tuple]]:
    """Encoder plus recurrent decoder under teacher-forced cross entropy."""
    model = build_model(spec, cfg.seed)
    shuffle_rng = substream(cfg.seed, "shuffle")
    opt = nn.Adam(list(model.named_parameters()), lr=cfg.lr)
    n = matrices.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        total = 0.0
        batches = 0
        for idx in _batches(n, cfg.batch_size, shuffle_rng):
            xb = matrices[idx]
            toks = [token_seqs[i] for i in idx]
            opt.zero_grad()
            z = model.encoder.forward(xb)
            loss, dz = model.seq_decoder.teacher_loss(z, toks)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            model.encoder.backward(dz)
            opt.step()
            total += loss
            batches += 1
        history.append((epoch, total / batches, 0.0, 0.0, 0.0))
    return model, history


def train(matrices: np.ndarray, targets, labels, spec: ModelSpec,
          cfg: TrainConfig) -> tuple[AttackModel, list[tuple]]:
    """Dispatch on modality. ``targets`` is an image array for continuous
    models or a list of framed token sequences for sequence models."""
    if spec.modality == "continuous":
        return train_continuous(matrices, targets, labels, spec, cfg)
    return train_sequence(matrices, targets, spec, cfg)


def reconstruct(model: AttackModel, matrices: np.ndarray) -> list[MediaSample]:
    z = encode(model, matrices)
    if model.spec.modality == "continuous":
        return [MediaSample.continuous(img) for img in decode_continuous(model, z)]
    return [MediaSample.token_seq(t) for t in decode_sequence(model, z)]


def word_accuracy(reference: np.ndarray, hypothesis: np.ndarray) -> float:
    """Positional word match rate over the reference length.

    Both sequences are compared on content tokens only; the shorter length
    bounds the comparison and misses past it count against the reference.
    """
    ref = [t for t in np.asarray(reference).tolist() if t not in (SOS_ID, EOS_ID)]
    hyp = [t for t in np.asarray(hypothesis).tolist() if t not in (SOS_ID, EOS_ID)]
    if not ref:
        return 1.0 if not hyp else 0.0
    matches = sum(1 for a, b in zip(ref, hyp) if a == b)
    return matches / len(ref)


def evaluate_mse(recons: list[MediaSample], refs: list[MediaSample]) -> np.ndarray:
    out = np.empty(len(recons))
    for i, (r, t) in enumerate(zip(recons, refs)):
        diff = r.image - t.image
        out[i] = float(np.mean(diff * diff))
    return out


def evaluate_word_accuracy(recons: list[MediaSample], refs: list[MediaSample]) -> np.ndarray:
    return np.array([word_accuracy(t.tokens, r.tokens) for r, t in zip(recons, refs)])


def evaluate_privacy_match(model: AttackModel, recons: list[MediaSample],
                           labels: np.ndarray) -> np.ndarray:
    images = np.stack([r.image for r in recons])
    _, cls = discriminate(model, images)
    return (cls.argmax(axis=1) == labels).astype(np.float64)


def evaluate(recons: list[MediaSample], refs: list[MediaSample], metric: str,
             model: AttackModel | None = None,
             labels: np.ndarray | None = None) -> np.ndarray:
    """Per-sample scores under the named metric."""
    if metric == "mse":
        return evaluate_mse(recons, refs)
    if metric == "word_accuracy":
        return evaluate_word_accuracy(recons, refs)
    if metric == "privacy_match":
        if model is None or labels is None:
            raise DataFormatError("privacy_match needs the model and the labels")
        return evaluate_privacy_match(model, recons, labels)
    raise DataFormatError(f"unknown metric {metric!r}")


def save_model(path, model: AttackModel, extra_meta: dict | None = None):
    meta = {"spec": model.spec.to_meta()}
    if model.norm_stats is not None:
        meta["norm"] = [model.norm_stats.lo, model.norm_stats.hi]
    if extra_meta:
        meta.update(extra_meta)
    tensors = [(name, layer.params[key]) for name, layer, key in model.named_parameters()]
    nn.save_checkpoint(path, meta, tensors)


def load_model(path) -> tuple[AttackModel, dict]:
    meta, tensors = nn.load_checkpoint(path)
    spec = ModelSpec.from_meta(meta["spec"])
    model = build_model(spec, seed=0)
    names = [name for name, _, _ in model.named_parameters()]
    if names != list(tensors.keys()):
        raise DataFormatError("checkpoint tensors do not match the model layout")
    for name, layer, key in model.named_parameters():
        stored = tensors[name]
        if stored.shape != layer.params[key].shape:
            raise DataFormatError(
                f"checkpoint tensor {name!r} has shape {stored.shape}, "
                f"model expects {layer.params[key].shape}"
            )
        layer.params[key][...] = stored
    if "norm" in meta:
        model.norm_stats = NormStats(*meta["norm"])
    return model, meta
