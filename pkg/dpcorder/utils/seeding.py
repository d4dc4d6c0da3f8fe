"""
Seed derivation for reproducible Monte Carlo sweeps.
"""

import numpy as np


def derive_seed(master_seed: int, *keys: int) -> int:
    """
    Derive a 64-bit child seed from a master seed and integer keys.

    Uses numpy's SeedSequence hash with the keys as spawn key, so the seed
    for (grid, trial) never depends on how many trials or grid points
    exist. Identical inputs give identical seeds on every platform.
    """
    sequence = np.random.SeedSequence(
        entropy=to_uint64(master_seed), spawn_key=tuple(int(k) for k in keys)
    )
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def to_uint64(seed: int) -> int:
    """Map any Python integer onto the unsigned 64-bit range."""
    return int(seed) % (1 << 64)
