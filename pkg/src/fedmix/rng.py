"""Seed derivation for independent, reproducible random streams.

Every random draw in a simulation comes from a stream keyed by
``(master_seed, purpose, *indices)``. The key is serialized as UTF-8 text
joined by ``\\x1f`` and hashed with BLAKE2b (8-byte digest); the digest,
read as a little-endian unsigned 64-bit integer, seeds a PCG64 generator.

Streams are never shared between purposes, rounds or clients, so the
order in which client work executes cannot change any result.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = "\x1f"


def derive_seed(master_seed: int, purpose: str, *indices: int | str) -> int:
    """Return the 64-bit seed for stream ``(master_seed, purpose, *indices)``."""
    parts = [str(int(master_seed)), purpose, *(str(i) for i in indices)]
    digest = hashlib.blake2b(_SEP.join(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(master_seed: int, purpose: str, *indices: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, purpose, *indices)))
