"""Keyed random substreams.

Every random draw in the toolkit comes from a Philox (counter-based) generator
whose key is derived from ``(seed, role, *index)``.  Two calls with the same
key produce the same stream regardless of call order, process, or thread
count, which is what makes batch evaluation order-independent.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def _role_id(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


def seed_sequence(seed: int, role: str, *index: int) -> np.random.SeedSequence:
    key = (_role_id(role),) + tuple(int(i) & MASK64 for i in index)
    return np.random.SeedSequence(entropy=int(seed) & MASK64, spawn_key=key)


def substream(seed: int, role: str, *index: int) -> np.random.Generator:
    """Return an independent generator keyed by ``(seed, role, *index)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, role, *index)))


def derive_int(seed: int, role: str, *index: int, bits: int = 31) -> int:
    """A deterministic integer seed for consumers that take a plain int (numba kernels)."""
    word = seed_sequence(seed, role, *index).generate_state(1, dtype=np.uint64)[0]
    return int(word) & ((1 << bits) - 1)


def state_key(bits: np.ndarray) -> int:
    """Stable 64-bit digest of a 0/1 state vector, usable as a substream index."""
    packed = np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()
    return zlib.crc32(packed) | (len(bits) << 32)
