"""Counter-based, per-replication random streams.

Replication ``r`` of a run seeded with ``seed`` draws from a Philox stream
keyed by ``SeedSequence(seed, spawn_key=(r,))``, so results do not depend on
how replications are batched or scheduled.  Normals use the inverse CDF of
53-bit uniforms that never hit 0 or 1, which keeps draws identical across
platforms.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_TWO_M53 = 2.0**-53


def stream(seed, replication, tag=None):
    key = (int(replication),) if tag is None else (int(replication), int(tag))
    return np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key))


def uniforms(bitgen, size):
    raw = bitgen.random_raw(size) >> np.uint64(11)
    return (raw.astype(np.float64) + 0.5) * _TWO_M53


def normals(seed, first, count, size, tag=None):
    """Standard normals of shape ``(count, size)`` for replications ``first .. first+count-1``.

    Row ``k`` is the first ``size`` draws of replication ``first + k``'s
    stream, so a longer request extends a shorter one without changing it.
    A ``tag`` selects a family of streams disjoint from the untagged one.
    """
    out = np.empty((count, size))
    for k in range(count):
        out[k] = ndtri(uniforms(stream(seed, first + k, tag), size))
    return out
