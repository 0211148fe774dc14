"""Deterministic seed derivation.

A single master seed fans out into named child streams, one per pipeline
stage (or any other labelled consumer).  Derivation goes through a keyed
hash, so child streams are independent of each other and of the order in
which they are requested.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng", "block_rngs"]


def derive_seed(master: int, label: str) -> int:
    """Return a 64-bit seed derived from ``master`` and a text label."""
    digest = hashlib.blake2b(
        f"{int(master)}:{label}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def derive_rng(master: int, label: str) -> np.random.Generator:
    """A fresh Generator for the named child stream."""
    return np.random.default_rng(derive_seed(master, label))


def block_rngs(seed: int, n_rows: int, block: int = 1024):
    """Yield ``(start, stop, rng)`` covering ``range(n_rows)`` in blocks.

    Each block's generator depends only on ``seed`` and the absolute block
    start, never on how many rows were requested before it, so values for a
    given row index are stable under chunked or parallel generation.
    """
    for start in range(0, n_rows, block):
        stop = min(start + block, n_rows)
        ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(start,))
        yield start, stop, np.random.default_rng(ss)
