"""Small shared helpers: seeded RNG substreams and key=value config files."""

from __future__ import annotations

import zlib

import numpy as np

from .errors import DataFormatError


def substream(seed: int, name: str) -> np.random.Generator:
    """A named random stream derived from one root seed.

    Separate concerns (dataset sampling, weight init, batch shuffling,
    noise injection) each get their own stream so adding draws to one
    never perturbs the others. Stable across processes and platforms.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def format_config(pairs: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs.items())


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"line {lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out
