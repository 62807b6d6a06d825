"""Counter-based random streams: one generator per ``(seed, stream, index)``."""

import numpy as np

SYSTEM = 0
DRIFT = 1
REFERENCE = 2
EXCITATION = 3


def stream_rng(seed, stream, *index):
    """Independent generator keyed by seed, stream id and counters.

    The same key always yields the same draws, regardless of what other
    streams or indices were consumed before.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream,) + tuple(int(i) for i in index)))
