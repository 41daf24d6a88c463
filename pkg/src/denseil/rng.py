"""Counter-based random streams.

All randomness in the package flows through Philox4x64-10 (numpy's Philox
bit generator), keyed by two 64-bit words: a master seed and a stream id.
Counter-based keying means any stream can be reproduced in isolation --
tracklet 17 of a corpus needs only (seed, 17), not the 16 streams before it.
"""

from __future__ import annotations

import numpy as np

# reserved stream-id offsets, spaced so derived ids never collide
INIT_STREAM = 1 << 32
SAMPLER_STREAM = 2 << 32
EVAL_STREAM = 3 << 32


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """An independent Philox4x64 generator for (seed, stream_id)."""
    key = np.array([seed % (1 << 64), stream_id % (1 << 64)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
