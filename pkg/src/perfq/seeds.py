"""Deterministic seed derivation.

All randomness in the package flows from one top-level seed. Each consumer
derives its own stream with a fixed label so that adding or reordering
consumers never perturbs the others.
"""

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng"]


def derive_seed(seed: int, label: str) -> int:
    """Return a 63-bit seed derived from (seed, label), stable across runs."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def derive_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))
