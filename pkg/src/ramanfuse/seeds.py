"""Deterministic seed derivation.

All randomness in an experiment flows from one root seed through named
sub-streams, so reruns of a single stage reproduce the full run bit for bit.
"""

import hashlib

import numpy as np


def derive_seed(root: int, *names) -> int:
    """Derive a child seed from a root seed and a path of stream names.

    Names may be strings or integers (e.g. a repeat index). The derivation
    is a SHA-256 hash, so it is stable across platforms and Python versions.
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(root: int, *names) -> np.random.Generator:
    """Seeded generator for the named sub-stream."""
    return np.random.default_rng(derive_seed(root, *names))
