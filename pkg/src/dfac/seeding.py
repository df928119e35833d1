"""Deterministic RNG streams derived from a single root seed.

Every stochastic draw in a run (weight init, quantile samples, rewards,
epsilon-greedy) comes from a named Philox stream so runs are bit-reproducible
and streams stay decoupled when code is reordered.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(root_seed: int, *names: str) -> np.random.Generator:
    """Return a counter-based generator for the stream identified by `names`.

    The same (root_seed, names) pair always yields an identical generator,
    independent of how many other streams were created before it.
    """
    keys = [zlib.crc32(name.encode("utf-8")) for name in names]
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(keys))
    return np.random.Generator(np.random.Philox(seq))
