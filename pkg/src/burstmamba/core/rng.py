"""Counter-based random streams.

Draws come from numpy's Philox generator keyed by ``(seed, stream)``, so a
given (seed, stream, draw index) yields the same value on every platform.
"""

import numpy as np

# named streams; fixed ids keep unrelated consumers independent
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_DROPOUT = 3
STREAM_SYNTH = 4
STREAM_SPLIT = 5
STREAM_BENCH = 6


def make_rng(seed, stream=0, *substreams):
    """Return a ``numpy.random.Generator`` for ``(seed, stream, *substreams)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),) + tuple(int(s) for s in substreams))
    return np.random.Generator(np.random.Philox(ss))
