"""Toy victim programs with planted, well-understood leakage.

Each victim is an interpreted model of a media-processing routine: it walks
an input sample and emits the memory accesses the real code would perform.
Secret-dependent accesses (table lookups indexed by data, loop trip counts
derived from data, hash bucket probes per word) carry instruction addresses
inside one known "leaky" function, while scaffolding accesses (framing,
scanning, parsing) depend only on element position. That gives every
dataset exact ground truth for localization.

Every victim also produces a public output through a fixed linear map of
its input, which is what makes perception blinding exactly reversible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataFormatError
from .traces import MemoryTrace
from .utils import substream

SOS_ID = 0
EOS_ID = 1
FIRST_WORD_ID = 2


@dataclass
class MediaSample:
    """Either a continuous H x W frame or a token sequence framed by SOS/EOS."""

    kind: str  # "continuous" | "tokens"
    image: np.ndarray | None = None
    tokens: np.ndarray | None = None

    @classmethod
    def continuous(cls, image) -> "MediaSample":
        return cls(kind="continuous", image=np.asarray(image, dtype=np.float64))

    @classmethod
    def token_seq(cls, tokens) -> "MediaSample":
        return cls(kind="tokens", tokens=np.asarray(tokens, dtype=np.int64))

    def content_tokens(self) -> np.ndarray:
        """Tokens with the SOS/EOS frame stripped."""
        if self.kind != "tokens":
            raise DataFormatError("content_tokens on a continuous sample")
        toks = self.tokens
        if len(toks) < 2 or toks[0] != SOS_ID or toks[-1] != EOS_ID:
            raise DataFormatError("token sequence must be framed by SOS and EOS")
        return toks[1:-1]


@dataclass(frozen=True)
class SymbolRange:
    start: int  # inclusive instruction address
    end: int  # exclusive
    function: str


def lookup_symbol(symbols: list[SymbolRange], ip: int) -> str | None:
    for s in symbols:
        if s.start <= ip < s.end:
            return s.function
    return None


class _TraceBuilder:
    def __init__(self):
        self.ips: list[int] = []
        self.addrs: list[int] = []

    def access(self, ip: int, addr: int):
        self.ips.append(ip)
        self.addrs.append(addr)

    def build(self, source: str) -> MemoryTrace:
        return MemoryTrace(
            np.array(self.ips, dtype=np.uint64),
            np.array(self.addrs, dtype=np.uint64),
            source=source,
        )


def quantize(value: float, levels: int) -> int:
    """Map [0, 1) onto 0..levels-1; values at or above 1 saturate."""
    return min(int(value * levels), levels - 1)


def _shift_blend(image: np.ndarray) -> np.ndarray:
    # Fixed linear map standing in for the victim's public output path.
    return 0.5 * image + 0.25 * np.roll(image, 1, axis=0) + 0.25 * np.roll(image, 1, axis=1)


class VictimProgram:
    """Interface shared by the toy victims."""

    name: str = ""
    symbols: list[SymbolRange] = []
    leaky_functions: frozenset[str] = frozenset()
    n_privacy_classes: int = 4

    def run(self, sample: MediaSample) -> tuple[MemoryTrace, MediaSample]:
        raise NotImplementedError

    def public_output(self, sample: MediaSample) -> MediaSample:
        raise NotImplementedError

    def leaky_record_mask(self, trace: MemoryTrace) -> np.ndarray:
        """True where a trace record was issued from a leaky function."""
        leaky = [s for s in self.symbols if s.function in self.leaky_functions]
        ips = trace.instruction_addresses
        mask = np.zeros(len(trace), dtype=bool)
        for s in leaky:
            mask |= (ips >= np.uint64(s.start)) & (ips < np.uint64(s.end))
        return mask


class LookupVictim(VictimProgram):
    """Per-element table lookup, the classic data-indexed load.

    For every element the victim does fixed scanning work, quantizes the
    value to ``levels`` buckets and reads one table entry at
    table_base + level * stride from inside ``extend_lookup``.
    """

    name = "lookup"

    def __init__(self, height=16, width=16, levels=8,
                 table_base=0x610000, stride=64 * 513):
        self.height = height
        self.width = width
        self.levels = levels
        self.table_base = table_base
        self.stride = stride
        self.symbols = [
            SymbolRange(0x401000, 0x401040, "read_frame"),
            SymbolRange(0x401040, 0x401100, "scan_element"),
            SymbolRange(0x401100, 0x401140, "extend_lookup"),
        ]
        self.leaky_functions = frozenset({"extend_lookup"})

    def table_address(self, level: int) -> int:
        return self.table_base + level * self.stride

    def run(self, sample: MediaSample) -> tuple[MemoryTrace, MediaSample]:
        image = sample.image
        if image is None or image.shape != (self.height, self.width):
            raise DataFormatError(
                f"{self.name} expects a continuous {self.height}x{self.width} sample"
            )
        tb = _TraceBuilder()
        for j in range(8):  # frame header scan
            tb.access(0x401004, 0x600000 + 64 * j)
        for e, value in enumerate(image.reshape(-1)):
            col = e % 16
            # Scanning scaffold: position-dependent only, never value-dependent.
            tb.access(0x401044, 0x601000)
            tb.access(0x401048, 0x601040 + 64 * (col % 4))
            tb.access(0x40104C, 0x601400)
            tb.access(0x401050, 0x602000 + 64 * (e % 16))
            tb.access(0x401054, 0x601040 + 64 * (col % 4))
            tb.access(0x401058, 0x601400)
            tb.access(0x40105C, 0x601000)
            level = quantize(float(value), self.levels)
            tb.access(0x401110, self.table_address(level))
        for j in range(4):  # frame epilogue
            tb.access(0x401008, 0x600200 + 64 * j)
        return tb.build(self.name), self.public_output(sample)

    def public_output(self, sample: MediaSample) -> MediaSample:
        return MediaSample.continuous(_shift_blend(sample.image))


class TransformVictim(VictimProgram):
    """Strided transform whose loop trip count depends on the data.

    Each element picks an iteration bound from its quantized value; every
    iteration reads a transform row and a source stripe from inside
    ``col_transform``, so both the count and the addresses leak.
    """

    name = "transform"

    def __init__(self, height=16, width=16, levels=8,
                 transform_base=0x630000, src_base=0x650000):
        self.height = height
        self.width = width
        self.levels = levels
        self.transform_base = transform_base
        self.src_base = src_base
        self.symbols = [
            SymbolRange(0x403000, 0x403040, "stage_frame"),
            SymbolRange(0x403040, 0x403080, "stage_block"),
            SymbolRange(0x403080, 0x4030C0, "col_transform"),
        ]
        self.leaky_functions = frozenset({"col_transform"})

    def run(self, sample: MediaSample) -> tuple[MemoryTrace, MediaSample]:
        image = sample.image
        if image is None or image.shape != (self.height, self.width):
            raise DataFormatError(
                f"{self.name} expects a continuous {self.height}x{self.width} sample"
            )
        tb = _TraceBuilder()
        for j in range(8):
            tb.access(0x403004, 0x640000 + 64 * j)
        for e, value in enumerate(image.reshape(-1)):
            col = e % self.width
            tb.access(0x403044, 0x641000 + 64 * (e % 8))
            tb.access(0x403048, 0x641400)
            level = quantize(float(value), self.levels)
            for j in range(1, level + 2, 2):
                tb.access(0x403084, self.transform_base + (j * self.width + col) * 320)
                tb.access(0x403088, self.src_base + j * 448)
        for j in range(4):
            tb.access(0x403008, 0x640200 + 64 * j)
        return tb.build(self.name), self.public_output(sample)

    def public_output(self, sample: MediaSample) -> MediaSample:
        return MediaSample.continuous(_shift_blend(sample.image))


class HashCheckVictim(VictimProgram):
    """Dictionary word check through an open hash table.

    Every content word hashes to a bucket and probes two lines of that
    bucket from inside ``dict_check``. The hash is deterministic and, for
    vocabularies up to the bucket count, collision-free (odd multiplier
    modulo a power of two permutes the word index).
    """

    name = "hashcheck"

    def __init__(self, vocab_size=32, num_buckets=64,
                 bucket_base=0x620000, bucket_stride=64 * 257):
        if num_buckets & (num_buckets - 1):
            raise DataFormatError("num_buckets must be a power of two")
        self.vocab_size = vocab_size
        self.num_buckets = num_buckets
        self.bucket_base = bucket_base
        self.bucket_stride = bucket_stride
        self.symbols = [
            SymbolRange(0x402000, 0x402040, "pipe_interface"),
            SymbolRange(0x402040, 0x402080, "next_token"),
            SymbolRange(0x402080, 0x4020C0, "dict_check"),
        ]
        self.leaky_functions = frozenset({"dict_check"})

    def bucket_of(self, word_index: int) -> int:
        return (word_index * 37 + 11) % self.num_buckets

    def run(self, sample: MediaSample) -> tuple[MemoryTrace, MediaSample]:
        words = sample.content_tokens() - FIRST_WORD_ID
        if len(words) and (words.min() < 0 or words.max() >= self.vocab_size):
            raise DataFormatError("token id outside the victim's vocabulary")
        tb = _TraceBuilder()
        for j in range(6):
            tb.access(0x402004, 0x622000 + 64 * j)
        for pos, w in enumerate(words):
            tb.access(0x402044, 0x623000)
            tb.access(0x402048, 0x623040 + 64 * (pos % 4))
            tb.access(0x40204C, 0x623000)
            bucket_addr = self.bucket_base + self.bucket_of(int(w)) * self.bucket_stride
            tb.access(0x402084, bucket_addr)
            tb.access(0x402088, bucket_addr + 64)
        tb.access(0x402008, 0x622200)
        tb.access(0x40200C, 0x622240)
        return tb.build(self.name), self.public_output(sample)

    def public_output(self, sample: MediaSample) -> MediaSample:
        # The checker echoes the text it validated.
        return MediaSample.token_seq(sample.tokens.copy())


VICTIM_KINDS = {
    "lookup": LookupVictim,
    "transform": TransformVictim,
    "hashcheck": HashCheckVictim,
}


# Generative families. Continuous samples live on a small smooth manifold
# so that nearby secrets produce nearby frames; sentences come from a tiny
# slot grammar over a 32-word vocabulary.

_FACTOR_FREQS = [(1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (2, 2), (3, 1), (1, 3)]


def factor_basis(height: int, width: int, factors: int) -> np.ndarray:
    if factors > len(_FACTOR_FREQS):
        raise DataFormatError(f"at most {len(_FACTOR_FREQS)} factors supported")
    ii = (np.arange(height) + 0.5) / height
    jj = (np.arange(width) + 0.5) / width
    basis = np.empty((factors, height, width))
    for k, (u, v) in enumerate(_FACTOR_FREQS[:factors]):
        basis[k] = np.outer(np.cos(np.pi * u * ii), np.cos(np.pi * v * jj))
    return basis


def continuous_from_factors(z: np.ndarray, height: int, width: int) -> np.ndarray:
    basis = factor_basis(height, width, len(z))
    return 0.5 + 0.1 * np.tensordot(z, basis, axes=1)


def sample_continuous(rng: np.random.Generator, height=16, width=16, factors=4):
    """One family sample: (sample, latent factors, privacy label)."""
    z = rng.uniform(-1.0, 1.0, size=factors)
    image = continuous_from_factors(z, height, width)
    label = (2 if z[0] > 0 else 0) + (1 if z[1] > 0 else 0)
    return MediaSample.continuous(image), z, label


_TEMPLATES = [
    ("noun", "verb"),
    ("noun", "verb", "adverb"),
    ("adjective", "noun", "verb"),
    ("adjective", "noun", "verb", "adverb", "noun"),
]
_GROUP_OF = {"noun": 0, "verb": 1, "adjective": 2, "adverb": 3}


def sample_sentence(rng: np.random.Generator, vocab_size=32):
    """One grammar sample: (sample, template id as privacy label)."""
    group_size = vocab_size // 4
    template_id = int(rng.integers(len(_TEMPLATES)))
    words = [
        FIRST_WORD_ID + _GROUP_OF[slot] * group_size + int(rng.integers(group_size))
        for slot in _TEMPLATES[template_id]
    ]
    return MediaSample.token_seq([SOS_ID] + words + [EOS_ID]), template_id


@dataclass(frozen=True)
class DatasetManifest:
    """Everything needed to regenerate a dataset bit for bit."""

    victim: str
    n_train: int = 512
    n_test: int = 128
    seed: int = 7
    height: int = 16
    width: int = 16
    levels: int = 8
    factors: int = 4
    vocab_size: int = 32

    def to_lines(self) -> str:
        pairs = [(k, getattr(self, k)) for k in self.__dataclass_fields__]
        return "".join(f"{k}={v}\n" for k, v in pairs)

    @classmethod
    def from_lines(cls, text: str) -> "DatasetManifest":
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataFormatError(f"line {lineno}: expected key=value, got {raw!r}")
            key = key.strip()
            if key not in cls.__dataclass_fields__:
                raise DataFormatError(f"line {lineno}: unknown manifest key {key!r}")
            field_type = cls.__dataclass_fields__[key].type
            kwargs[key] = value.strip() if field_type == "str" else int(value)
        if "victim" not in kwargs:
            raise DataFormatError("manifest is missing the victim id")
        return cls(**kwargs)


@dataclass
class Dataset:
    manifest: DatasetManifest
    victim: VictimProgram
    samples: list[MediaSample]
    traces: list[MemoryTrace]
    outputs: list[MediaSample]
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def split(self, which: str) -> np.ndarray:
        return self.train_idx if which == "train" else self.test_idx


def victim_from_manifest(manifest: DatasetManifest) -> VictimProgram:
    if manifest.victim not in VICTIM_KINDS:
        raise DataFormatError(
            f"unknown victim {manifest.victim!r}, expected one of {sorted(VICTIM_KINDS)}"
        )
    if manifest.victim == "hashcheck":
        return HashCheckVictim(vocab_size=manifest.vocab_size)
    return VICTIM_KINDS[manifest.victim](
        height=manifest.height, width=manifest.width, levels=manifest.levels
    )


def gen_dataset(manifest: DatasetManifest) -> Dataset:
    """Generate samples, run the victim on each, and split train/test.

    Fully determined by the manifest: the sampler draws from the "dataset"
    substream of the manifest seed, and the split is the leading n_train
    indices versus the following n_test.
    """
    victim = victim_from_manifest(manifest)
    rng = substream(manifest.seed, "dataset")
    n = manifest.n_train + manifest.n_test
    samples, traces, outputs, labels = [], [], [], []
    for _ in range(n):
        if manifest.victim == "hashcheck":
            sample, label = sample_sentence(rng, vocab_size=manifest.vocab_size)
        else:
            sample, _, label = sample_continuous(
                rng, manifest.height, manifest.width, manifest.factors
            )
        trace, output = victim.run(sample)
        samples.append(sample)
        traces.append(trace)
        outputs.append(output)
        labels.append(label)
    return Dataset(
        manifest=manifest,
        victim=victim,
        samples=samples,
        traces=traces,
        outputs=outputs,
        labels=np.array(labels, dtype=np.int64),
        train_idx=np.arange(0, manifest.n_train),
        test_idx=np.arange(manifest.n_train, n),
    )


def format_media(sample: MediaSample) -> str:
    """Text form of a media sample; inverse of parse_media."""
    if sample.kind == "continuous":
        h, w = sample.image.shape
        rows = "".join(
            " ".join(repr(float(v)) for v in row) + "\n" for row in sample.image
        )
        return f"continuous {h} {w}\n{rows}"
    toks = " ".join(str(int(t)) for t in sample.tokens)
    return f"tokens {len(sample.tokens)}\n{toks}\n"


def parse_media(text: str) -> MediaSample:
    lines = text.splitlines()
    if not lines:
        raise DataFormatError("empty media file")
    head = lines[0].split()
    if head[0] == "continuous":
        if len(head) != 3:
            raise DataFormatError(f"bad continuous header {lines[0]!r}")
        h, w = int(head[1]), int(head[2])
        if len(lines) < 1 + h:
            raise DataFormatError(f"expected {h} image rows, got {len(lines) - 1}")
        image = np.empty((h, w), dtype=np.float64)
        for r in range(h):
            vals = lines[1 + r].split()
            if len(vals) != w:
                raise DataFormatError(f"line {r + 2}: expected {w} values, got {len(vals)}")
            image[r] = [float(v) for v in vals]
        return MediaSample.continuous(image)
    if head[0] == "tokens":
        if len(head) != 2:
            raise DataFormatError(f"bad tokens header {lines[0]!r}")
        n = int(head[1])
        toks = lines[1].split() if len(lines) > 1 else []
        if len(toks) != n:
            raise DataFormatError(f"expected {n} tokens, got {len(toks)}")
        return MediaSample.token_seq([int(t) for t in toks])
    raise DataFormatError(f"unknown media kind {head[0]!r}")
