"""Counter-based random streams.

Every stream is a Philox generator whose key is derived from a tuple of
integers ``(master_seed, purpose, index, ...)``.  Streams never depend on
how work is scheduled, so results are identical for any worker count.
"""

import numpy as np

# purpose tags; part of the key, never reorder
COMMON_NOISE = 1
TYPES = 2
BUMP = 3
ORACLE = 4
SLICING = 5
REPLICATION = 6
CONTINUATION = 7
PERTURBATION = 8


def stream(*key):
    """Return a ``numpy.random.Generator`` for the integer key tuple."""
    words = [int(k) & 0xFFFFFFFF for k in key]
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=state))


def brownian_increments(seed, steps, n, dt, paths=None, purpose=COMMON_NOISE):
    """Brownian increments keyed by ``(seed, purpose, path)``.

    Returns an array of shape ``(steps, n)`` when ``paths`` is None, else
    ``(paths, steps, n)``.  Path ``p`` always receives the same increments
    regardless of how many paths are requested.
    """
    scale = np.sqrt(dt)
    if paths is None:
        return scale * stream(seed, purpose, 0).standard_normal((steps, n))
    out = np.empty((paths, steps, n))
    for p in range(paths):
        out[p] = scale * stream(seed, purpose, p).standard_normal((steps, n))
    return out
