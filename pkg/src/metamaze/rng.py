"""Counter-based deterministic RNG streams.

All randomness in the engine is drawn from Philox generators keyed by
(seed, stream...) tuples, so independent pieces of work (task sampling,
sequence sampling, per-episode noise) never share a stream and results
are reproducible regardless of execution order or parallelism.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream tags, one per logical consumer of randomness.
STREAM_TASK_PARAMS = 1
STREAM_SEQUENCE = 2
STREAM_CORPUS_MAP = 3
STREAM_MAZE_LAYOUT = 4
STREAM_MAZE_FEATURES = 5
STREAM_AGENT = 6
STREAM_EPISODE = 7
STREAM_POOL = 8


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for (seed, *key)."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=tuple(int(k) & _MASK64 for k in key),
    )
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse (seed, *key) into a single 63-bit child seed."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=tuple(int(k) & _MASK64 for k in key),
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
