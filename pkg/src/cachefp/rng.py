"""Seed derivation for all pseudo-randomness in the toolkit.

Generator: numpy's PCG64 (a published, seedable 64-bit generator). Every
stream is derived from (root seed, module tag, index) through
``numpy.random.SeedSequence([seed, crc32(tag), index])`` so independent
components can reproduce any draw from the manifest alone.
"""

from __future__ import annotations

import zlib

import numpy as np

RNG_NAME = "pcg64"


def derive_seed(seed: int, tag: str, index: int = 0) -> np.random.SeedSequence:
    """Child seed for stream ``tag``/``index`` under root ``seed``."""
    return np.random.SeedSequence([int(seed), zlib.crc32(tag.encode("utf-8")), int(index)])


def derive_rng(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, tag, index)))
