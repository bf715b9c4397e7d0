"""Deterministic random streams.

Every stochastic routine draws from a counter-based Philox generator keyed
by the master seed plus a tag path, so independent subsystems get
independent streams and a whole run is reproducible from one integer.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, *tags) -> np.random.Generator:
    """Generator keyed by (seed, tags); identical inputs give identical streams."""
    msg = repr((int(seed),) + tuple(tags)).encode()
    digest = hashlib.sha256(msg).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def spawn_key(seed: int, *tags) -> int:
    """64-bit subseed for handing to routines that take a plain seed."""
    msg = repr((int(seed),) + tuple(tags)).encode()
    return int.from_bytes(hashlib.sha256(msg).digest()[:8], "little")
