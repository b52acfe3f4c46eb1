"""Seeded substream helpers.

Every stochastic piece of the simulator draws from a stream derived here, so
that a (seed, label) pair always yields the same sequence regardless of call
order, platform, or process. Python's Mersenne Twister is stable across
versions, which keeps run logs byte-reproducible.
"""

from __future__ import annotations

import hashlib
import random


def substream(seed: int, *labels: object) -> random.Random:
    """Return an independent RNG for `seed` qualified by `labels`."""
    key = repr((int(seed),) + labels).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))
