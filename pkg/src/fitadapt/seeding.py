"""Deterministic seed derivation.

Every stochastic operation takes an explicit integer seed. Sub-streams
(data split, batch order, weight init, ...) are derived from the caller's
seed plus string tags, so adding a new consumer never shifts the stream of
an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *tags: object) -> int:
    """Derive a stable 63-bit child seed from ``seed`` and a tag path."""
    text = ":".join([str(int(seed)), *[str(t) for t in tags]])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(seed: int, *tags: object) -> np.random.Generator:
    """A numpy generator on the derived sub-stream."""
    return np.random.default_rng(derive_seed(seed, *tags))
