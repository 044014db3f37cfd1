"""Seeded random streams.

Every Monte-Carlo run owns independent PCG64 substreams derived from the
master seed with :class:`numpy.random.SeedSequence`::

    SeedSequence(master_seed, spawn_key=(run_index, purpose))

The spawn key is hashed together with the entropy, so substreams for
different ``(run_index, purpose)`` pairs are statistically independent and
do not depend on how many other runs exist or in which order (or process)
they are evaluated. PCG64 and SeedSequence produce the same bits on every
platform.
"""
import numpy as np

SENSOR = 0
SAMPLING = 1


def substream(master_seed: int, run_index: int, purpose: int = SENSOR) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(run_index), int(purpose)))
    return np.random.Generator(np.random.PCG64(seq))


def make_rng(seed=None) -> np.random.Generator:
    """Return a PCG64 generator; passes existing generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))
