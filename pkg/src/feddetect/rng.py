"""Deterministic RNG stream derivation.

Every random draw in a simulation comes from a generator derived from the
master seed plus a purpose label and integer keys (e.g. round index,
client id). Streams are independent of each other and of execution order,
so running clients in parallel or skipping a code path cannot perturb any
other stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *keys: int | str) -> int:
    """Stable 128-bit seed from (master_seed, *keys)."""
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(master_seed)).encode())
    for key in keys:
        h.update(b"/")
        h.update(str(key).encode())
    return int.from_bytes(h.digest(), "little")


def derive_rng(master_seed: int, *keys: int | str) -> np.random.Generator:
    """Fresh PCG64 generator for the stream named by (master_seed, *keys)."""
    return np.random.default_rng(derive_seed(master_seed, *keys))
