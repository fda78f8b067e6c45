"""Defenses: perception blinding and trace noise injection.

Blinding mixes the private input with a mask before it ever reaches the
victim, so the trace the spy observes describes the blend. Because the
bundled victims expose a linear public output, the legitimate user can
subtract the mask's precomputed contribution and recover the private
result exactly; the attacker's reconstruction collapses toward the mask.
Continuous media blend arithmetically, token sequences blend by inserting
mask words.

Noise injection perturbs captured traces instead: three schemes for
scalar-index traces (gaussian blend, record removal, rotation) and three
for Prime+Probe bit records (leave-out, false hit/miss flips, pairwise
reorder), each with named low/high presets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cachesim import PPTrace
from .errors import DataFormatError
from .traces import SideChannelTrace
from .utils import substream
from .victims import EOS_ID, SOS_ID, MediaSample


@dataclass(frozen=True)
class BlindConfig:
    """Mixing weight and mask. The mask must dominate: alpha <= 0.5."""

    alpha: float
    mask: MediaSample
    mask_word: int | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 0.5:
            raise DataFormatError(
                f"alpha must be in (0, 0.5] so the mask dominates, got {self.alpha}"
            )
        if self.mask.kind == "tokens":
            if self.mask_word is None:
                raise DataFormatError("text blinding needs a mask_word")
            if self.n_inserts < 1:
                raise DataFormatError(
                    f"alpha {self.alpha} inserts no mask words; need floor(1/alpha)-1 >= 1"
                )

    @property
    def n_inserts(self) -> int:
        """Mask words inserted after each original word."""
        return int(np.floor(1.0 / self.alpha)) - 1


def blind_continuous(image: np.ndarray, cfg: BlindConfig) -> np.ndarray:
    """alpha*image + (1-alpha)*mask, real arithmetic, no clamping."""
    image = np.asarray(image, dtype=np.float64)
    if cfg.mask.kind != "continuous":
        raise DataFormatError("continuous blinding needs a continuous mask")
    if cfg.mask.image.shape != image.shape:
        raise DataFormatError(
            f"mask shape {cfg.mask.image.shape} does not match input {image.shape}"
        )
    return cfg.alpha * image + (1.0 - cfg.alpha) * cfg.mask.image


def unblind_output(p_blinded: np.ndarray, p_mask: np.ndarray, alpha: float) -> np.ndarray:
    """Invert a linear public output: (P_blinded - (1-alpha)*P_mask)/alpha."""
    if not 0.0 < alpha <= 0.5:
        raise DataFormatError(f"alpha must be in (0, 0.5], got {alpha}")
    return (np.asarray(p_blinded, dtype=np.float64)
            - (1.0 - alpha) * np.asarray(p_mask, dtype=np.float64)) / alpha


def blind_text(tokens: np.ndarray, cfg: BlindConfig) -> np.ndarray:
    """Insert n_inserts mask words after each content word.

    The frame tokens stay put: nothing is inserted after the start marker
    or around the end marker.
    """
    toks = MediaSample.token_seq(tokens).content_tokens()
    out = [SOS_ID]
    for t in toks:
        out.append(int(t))
        out.extend([cfg.mask_word] * cfg.n_inserts)
    out.append(EOS_ID)
    return np.array(out, dtype=np.int64)


def unblind_text(blinded: np.ndarray, cfg: BlindConfig) -> np.ndarray:
    """Drop exactly n_inserts tokens after each surviving original word."""
    toks = MediaSample.token_seq(blinded).content_tokens().tolist()
    out = [SOS_ID]
    i = 0
    while i < len(toks):
        out.append(toks[i])
        i += 1 + cfg.n_inserts
    out.append(EOS_ID)
    return np.array(out, dtype=np.int64)


@dataclass(frozen=True)
class NoiseScheme:
    """One perturbation: a kind, its strength and a seed.

    The draw stream advances across apply_noise calls, so a batch of
    traces gets independent perturbations. Rebuilding the scheme with the
    same seed replays the exact sequence.
    """

    kind: str
    amount: float
    seed: int = 0

    _SCALAR = ("gaussian", "removal", "shift")
    _BITS = ("leaveout", "falsehitmiss", "wrongorder")

    def __post_init__(self):
        if self.kind not in self._SCALAR + self._BITS:
            raise DataFormatError(f"unknown noise kind {self.kind!r}")

    def rng(self) -> np.random.Generator:
        gen = self.__dict__.get("_gen")
        if gen is None:
            gen = substream(self.seed, f"noise.{self.kind}")
            object.__setattr__(self, "_gen", gen)
        return gen


NOISE_PRESETS = {
    "gaussian-low": ("gaussian", 0.2),
    "gaussian-high": ("gaussian", 0.5),
    "removal-low": ("removal", 20.0),
    "removal-high": ("removal", 50.0),
    "shift-low": ("shift", 10.0),
    "shift-high": ("shift", 100.0),
    "leaveout-low": ("leaveout", 20.0),
    "leaveout-high": ("leaveout", 50.0),
    "falsehitmiss-low": ("falsehitmiss", 20.0),
    "falsehitmiss-high": ("falsehitmiss", 50.0),
    "wrongorder-low": ("wrongorder", 100.0),
    "wrongorder-high": ("wrongorder", 500.0),
}


def preset_scheme(name: str, seed: int = 0) -> NoiseScheme:
    try:
        kind, amount = NOISE_PRESETS[name]
    except KeyError:
        raise DataFormatError(
            f"unknown noise preset {name!r}; choose from {sorted(NOISE_PRESETS)}"
        ) from None
    return NoiseScheme(kind, amount, seed)


def _pick_positions(rng: np.random.Generator, total: int, count: int) -> np.ndarray:
    return rng.choice(total, size=count, replace=False)


def _noisy_scalar(trace: SideChannelTrace, scheme: NoiseScheme) -> SideChannelTrace:
    values = trace.values.astype(np.float64)
    if scheme.kind == "gaussian":
        # blend toward noise shaped like the trace itself: d' = x*n + (1-x)*d
        mu = float(values.mean()) if values.size else 0.0
        sigma = float(values.std()) if values.size else 1.0
        n = mu + scheme.rng().standard_normal(values.shape) * sigma
        mixed = scheme.amount * n + (1.0 - scheme.amount) * values
        out = np.maximum(np.rint(mixed), 0.0).astype(np.uint64)
        return replace(trace, values=out)
    if scheme.kind == "removal":
        count = int(round(scheme.amount / 100.0 * len(values)))
        drop = set(_pick_positions(scheme.rng(), len(values), count).tolist())
        keep = np.array([i for i in range(len(values)) if i not in drop], dtype=np.int64)
        return replace(trace, values=trace.values[keep], aligned=False)
    # shift: rotate the whole trace
    steps = int(scheme.amount)
    return replace(trace, values=np.roll(trace.values, steps), aligned=False)


def _noisy_bits(trace: PPTrace, scheme: NoiseScheme) -> PPTrace:
    bits = np.array([v.bits for v in trace.vectors], dtype=np.uint8)
    flat = bits.reshape(-1)
    total = flat.shape[0]
    if scheme.kind == "leaveout":
        count = int(round(scheme.amount / 100.0 * total))
        pos = _pick_positions(scheme.rng(), total, count)
        flat = flat.copy()
        flat[pos] = 0
    elif scheme.kind == "falsehitmiss":
        count = int(round(scheme.amount / 100.0 * total))
        pos = _pick_positions(scheme.rng(), total, count)
        flat = flat.copy()
        flat[pos] ^= 1
    else:  # wrongorder: pair up chosen records and swap each pair
        count = int(scheme.amount)
        if count > total:
            raise DataFormatError(
                f"wrongorder needs {count} records, trace has {total}"
            )
        if count % 2:
            raise DataFormatError(f"wrongorder count must be even, got {count}")
        pos = _pick_positions(scheme.rng(), total, count)
        flat = flat.copy()
        a, b = pos[0::2], pos[1::2]
        flat[a], flat[b] = flat[b].copy(), flat[a].copy()
    new_bits = flat.reshape(bits.shape)
    vectors = [replace(v, bits=row) for v, row in zip(trace.vectors, new_bits)]
    return replace(trace, vectors=vectors)


def apply_noise(trace, scheme: NoiseScheme):
    """Perturb one captured trace; the result type matches the input.

    Scalar-index traces take the first three kinds, Prime+Probe traces the
    last three; crossing them is a modality error.
    """
    if isinstance(trace, SideChannelTrace):
        if scheme.kind not in NoiseScheme._SCALAR:
            raise DataFormatError(
                f"{scheme.kind} operates on Prime+Probe bit records, "
                "not scalar-index traces"
            )
        return _noisy_scalar(trace, scheme)
    if isinstance(trace, PPTrace):
        if scheme.kind not in NoiseScheme._BITS:
            raise DataFormatError(
                f"{scheme.kind} operates on scalar-index traces, "
                "not Prime+Probe bit records"
            )
        return _noisy_bits(trace, scheme)
    raise DataFormatError(f"cannot apply noise to {type(trace).__name__}")
