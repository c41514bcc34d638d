"""Deterministic RNG derivation so parallel work never shares a stream."""

from __future__ import annotations

import numpy as np


def derive_rng(*keys: int) -> np.random.Generator:
    """Generator seeded from an ordered tuple of integer keys.

    The same keys always give the same stream, and distinct key tuples give
    independent streams (SeedSequence guarantees).
    """
    if not keys:
        raise ValueError("derive_rng needs at least one key")
    return np.random.default_rng(np.random.SeedSequence([int(k) % (2**64) for k in keys]))
