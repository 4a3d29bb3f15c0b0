"""Deterministic random streams derived from a single experiment seed.

Every consumer of randomness (data generation, weight init, batch
shuffling, ...) asks for a named substream so that components stay
reproducible independently of one another.
"""

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator keyed by (seed, name); stable across runs and platforms."""
    tag = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, clip: float = 2.0) -> np.ndarray:
    """Draw from N(0, std^2) truncated at +/- clip standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > clip
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > clip
    return out * std
