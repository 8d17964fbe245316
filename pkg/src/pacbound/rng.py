"""Named, counter-addressable random streams.

Every random decision in the pipeline (weight init, epoch shuffles, weight
perturbations, Monte Carlo draws, random labels) pulls from a stream derived
from one root seed, a string label, and an integer counter. Streams are
backed by Philox, a counter-based generator, so (seed, label, counter)
fully determines the draws regardless of evaluation order or parallelism.
"""

from __future__ import annotations

import zlib

import numpy as np

# Stream labels used across the package. Free-form labels are allowed; these
# are the conventional ones a root seed fans out into.
INIT = "init"
SHUFFLE = "shuffle"
XI = "xi"
BATCH = "batch"
MC = "mc"
LABELS = "labels"


def stream(root_seed: int, label: str, counter: int = 0) -> np.random.Generator:
    """Return the generator for (root_seed, label, counter).

    The same triple always yields the same stream; distinct triples yield
    statistically independent streams.
    """
    if counter < 0:
        raise ValueError(f"stream counter must be >= 0, got {counter}")
    tag = zlib.crc32(label.encode("utf-8"))
    seq = np.random.SeedSequence(root_seed, spawn_key=(tag, counter))
    return np.random.Generator(np.random.Philox(seq))
