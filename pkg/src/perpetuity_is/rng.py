"""Counter-based random streams: replication i of seed s gets its own Philox key."""

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for (seed, index), derivable without sequential generation."""
    seed = int(seed)
    index = int(index)
    if not (0 <= seed <= _MASK64 and 0 <= index <= _MASK64):
        raise ValueError("seed and index must fit in 64 bits")
    return np.random.Generator(np.random.Philox(key=(seed << 64) | index))


def derived_seed(seed: int, tag: int) -> int:
    """A second seed family for auxiliary runs (oracles, audits)."""
    return (int(seed) * 0x9E3779B97F4A7C15 + int(tag)) & _MASK64
