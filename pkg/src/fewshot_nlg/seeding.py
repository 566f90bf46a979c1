"""Seed derivation: every random stream is a pure function of integer keys."""

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative ints into a 63-bit seed."""
    state = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]).generate_state(1, np.uint64)
    return int(state[0]) & _MASK63


def rng_for(*keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))
