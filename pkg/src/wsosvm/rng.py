"""Named random streams derived from a single 64-bit root seed.

Each consumer asks for a stream by purpose string, so adding a new consumer
never shifts the numbers drawn by an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(root_seed: int, *purpose: object) -> int:
    key = "/".join(str(p) for p in (int(root_seed) & 0xFFFFFFFFFFFFFFFF, *purpose))
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def stream(root_seed: int, *purpose: object) -> np.random.Generator:
    """Return an independent generator for ``purpose`` under ``root_seed``."""
    return np.random.Generator(np.random.PCG64(stream_seed(root_seed, *purpose)))
