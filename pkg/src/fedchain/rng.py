"""Deterministic seed derivation.

Every random draw in the simulator is rooted in a single experiment seed.
Sub-seeds for independent purposes (topology delays, per-node training,
per-update sealing, ...) are derived by hashing the master seed together
with a label path, so adding a new consumer never perturbs existing
streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_bytes(seed: int, label: str, n: int) -> bytes:
    """Expand (seed, label) into n pseudorandom bytes via SHA-256 blocks."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    prefix = seed.to_bytes(8, "little") + label.encode("utf-8")
    out = bytearray()
    counter = 0
    while len(out) < n:
        out += hashlib.sha256(prefix + counter.to_bytes(4, "little")).digest()
        counter += 1
    return bytes(out[:n])


def derive_seed(seed: int, *labels: object) -> int:
    """Derive a 64-bit sub-seed from a master seed and a label path."""
    label = "/".join(str(part) for part in labels)
    return int.from_bytes(derive_bytes(seed, label, 8), "little")


def generator_for(seed: int, *labels: object) -> np.random.Generator:
    """Seeded numpy generator for the given label path."""
    return np.random.default_rng(derive_seed(seed, *labels))
