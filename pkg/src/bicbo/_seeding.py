"""Seed derivation shared by every stochastic component."""

import zlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Return an independent generator keyed by ``(seed, *labels)``.

    Streams for different label tuples are statistically independent, and the
    same key always reproduces the same stream, regardless of process or order
    of creation.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label_key(lab) for lab in labels]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
