"""Splittable random number streams.

One experiment seed fans out into independent child streams, one per
trajectory (or per any other integer key path).  Philox is counter-based,
so identical (seed, key) always reproduces the identical stream regardless
of how many other streams were drawn in between.
"""

import numpy as np

__all__ = ["child_rng"]


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the child stream addressed by (seed, *key).

    The empty key gives the experiment's root stream.  Children derived
    from distinct keys are statistically independent.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
