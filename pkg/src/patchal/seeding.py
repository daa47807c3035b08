"""Keyed deterministic random streams.

Every source of randomness in the package is drawn from a stream keyed by
a tuple such as (experiment seed, loop index, purpose, image index).  The
key fully determines the stream, so results do not depend on worker
scheduling or call interleaving.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    return int(part) & _MASK64


def rng_stream(*key: int | str) -> np.random.Generator:
    """Return an independent generator identified by ``key``."""
    if not key:
        raise ValueError("stream key must not be empty")
    entropy = [_key_part(part) for part in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))
