"""Named RNG substreams derived from a single run seed.

Every source of randomness in the package draws from one of these streams,
so a run is fully reproducible from its seed. Stream ids are part of the
reproducibility contract: changing them changes every seeded artifact.
"""

from __future__ import annotations

import numpy as np

FIXTURES = 1
PARAMS = 2
BATCHING = 3
VIEWS = 4
SUBSAMPLE = 5
FEWSHOT = 6
HOLDOUT = 7


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for stream ``path`` under ``seed``; deterministic."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))
