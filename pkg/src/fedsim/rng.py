"""Deterministic random-stream derivation.

Every source of randomness in a run is a named substream of the run seed,
derived through a counter-based generator (Philox) keyed by
``(seed, stream tag, entity ids...)``.  A stream's output therefore depends
only on its key and its own draw count, never on scheduling order or thread
count, which is what makes runs bit-reproducible under parallel client
execution.

Stream tags (do not renumber; they are part of the reproducibility contract):

====  =======================================================
tag   purpose
====  =======================================================
1     dataset generation and non-IID partitioning
2     model / iterate initialisation
3     per-client sampling stream, keyed by ``client_id``
4     per-round client selection, keyed by ``round``
5     fixed evaluation subsample for large datasets
====  =======================================================
"""

from __future__ import annotations

import numpy as np

DATA_STREAM = 1
INIT_STREAM = 2
CLIENT_STREAM = 3
ROUND_STREAM = 4
EVAL_STREAM = 5


def substream(seed: int, tag: int, *entity: int) -> np.random.Generator:
    """Return a fresh generator for the ``(seed, tag, *entity)`` stream."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    key = np.random.SeedSequence(entropy=[int(seed), int(tag), *map(int, entity)])
    return np.random.Generator(np.random.Philox(key))
