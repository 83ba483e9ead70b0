"""Deterministic derived random generators.

Every stochastic choice in the project (corpus synthesis, batch shuffling,
crop offsets, masking, dropout) draws from a generator derived from a base
seed plus a string tag plus integer indices. Nothing keeps hidden RNG state,
so any run is replayable from (seed, step) alone and checkpoints do not need
to serialize generator internals.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(seed, tag, *indices):
    """A fresh Generator keyed on (seed, tag, *indices)."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode("utf-8"))]
    key.extend(int(i) & 0xFFFFFFFF for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
