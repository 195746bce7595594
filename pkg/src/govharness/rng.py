"""Seedable, splittable random streams.

Every random draw in the harness comes from ``stream(seed, index, tag)`` so that
results never depend on evaluation order or on how work is split across
workers.
"""

from __future__ import annotations

import hashlib
import zlib

import numpy as np


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, index: int, tag: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), _tag_key(tag)))
    return np.random.default_rng(ss)


def derive_int(seed: int, index: int, tag: str, bits: int = 48) -> int:
    """A reproducible integer drawn from the (seed, index, tag) stream."""
    return int(stream(seed, index, tag).integers(0, 2**bits))


def unit_hash(*parts: object) -> float:
    """Deterministic uniform in [0, 1) from arbitrary parts (process-independent)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2**64
