"""Per-replica random streams.

Each replica gets its own Philox generator keyed by ``(master seed, replica
index)``, so results do not depend on how replicas are scheduled across
workers.
"""

from __future__ import annotations

import os

import numpy as np

SEED_ENV = "EPILD_SEED"
_BLOCK = 4096


def resolve_seed(seed=None) -> int:
    """Explicit seed, else ``$EPILD_SEED``, else 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env:
        return int(env)
    return 0


def replica_generator(seed: int, replica: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replica)])
    return np.random.Generator(np.random.Philox(ss))


class UniformStream:
    """Buffered uniforms on (0, 1) drawn from a replica generator.

    Pulling scalars one at a time from numpy is slow; the simulator's inner
    loop reads from a refilled block instead.
    """

    __slots__ = ("_gen", "_buf", "_pos")

    def __init__(self, gen: np.random.Generator):
        self._gen = gen
        self._buf = []
        self._pos = 0

    def next(self) -> float:
        if self._pos >= len(self._buf):
            # 1 - U lies in (0, 1], safe for log
            self._buf = (1.0 - self._gen.random(_BLOCK)).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u
