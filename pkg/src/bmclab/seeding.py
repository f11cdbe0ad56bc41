"""Deterministic, splittable random streams.

Every random stream in the package is a :class:`numpy.random.Generator`
driven by the counter-based Philox4x64 bit generator.  Streams are keyed by
``SeedSequence(master_seed, spawn_key=key)``, which is the same construction
``SeedSequence.spawn`` uses, so a stream depends only on the master seed and
its key path.  Adding replicates never changes existing replicates.

Key namespaces used across the package:

* ``(0, i)``  branching randomness of replicate ``i``
* ``(1,)``    the quenched environment realisation
* ``(1, i)``  per-replicate environment in annealed runs
* ``(2, i)``  auxiliary-chain paths
* ``(3, i)``  second independent sample (two-sample tests)
* ``(4, i)``  environment of the second independent sample
"""

from __future__ import annotations

import numpy as np

REPLICATE = 0
ENVIRONMENT = 1
AUX_PATH = 2
SECOND_SAMPLE = 3
SECOND_ENVIRONMENT = 4


def stream(seed, *key):
    """Return the generator for ``key`` under the master ``seed``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def replicate_stream(seed, i):
    return stream(seed, REPLICATE, i)


def check_random_state(rng):
    """Turn ``None``, an int seed or a Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return stream(0)
    if isinstance(rng, (int, np.integer)):
        return stream(int(rng))
    raise TypeError(f"cannot build a random generator from {rng!r}")
