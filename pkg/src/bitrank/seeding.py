"""Deterministic seed derivation.

A single run seed fans out into named substreams so that adding draws to
one part of the pipeline never shifts the randomness seen by another.
Hashes go through sha256 rather than ``hash()`` because the latter is
salted per process.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash(*parts: object) -> int:
    """Map a tuple of primitives to a stable 64-bit integer."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _MASK64


def derive_seed(seed: int, name: str) -> int:
    return stable_hash("seed", int(seed), name)


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of a run seed."""
    return np.random.default_rng(derive_seed(seed, name))
