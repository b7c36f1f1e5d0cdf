"""Counter-based random streams.

All stochastic components draw from Philox (counter-based, 64-bit) keyed
by (seed, stream); replica k of an experiment uses stream k + 1, so chains
are reproducible bit-for-bit from the seed alone and replicas never share
a stream.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def philox_stream(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
