"""Deterministic sub-seed derivation.

Every random stream in a run is derived from one 64-bit seed by XOR-folding it with a
stream index multiplied by the 64-bit golden-ratio constant.
"""

import numpy as np

MASK_64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Stream indices used by the simulator
NOISE_STREAM = 1
DETECT_STREAM = 2
DRIFT_STREAM = 3
RUN_STREAM = 100
ENSEMBLE_STREAM = 200


def derive_seed(seed: int, index: int) -> int:
    """Derive an independent 64-bit sub-seed for stream ``index``.

    Args:
        seed: Parent seed.
        index: Stream or component index.

    Returns:
        Sub-seed in ``[0, 2**64)``.
    """
    folded = (seed & MASK_64) ^ ((_GOLDEN * (index + 1)) & MASK_64)
    # splitmix64 finalizer so neighbouring indices give unrelated streams
    folded = ((folded ^ (folded >> 30)) * 0xBF58476D1CE4E5B9) & MASK_64
    folded = ((folded ^ (folded >> 27)) * 0x94D049BB133111EB) & MASK_64
    return folded ^ (folded >> 31)


def rng_for(seed: int, index: int) -> np.random.Generator:
    """Return a numpy Generator seeded from ``derive_seed(seed, index)``."""
    return np.random.default_rng(derive_seed(seed, index))
