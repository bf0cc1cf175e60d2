"""Named RNG streams derived from one master seed.

Every stochastic subsystem (mobility, fading, policy sampling, placement,
training) pulls its own generator so that, e.g., changing the policy seed
never perturbs the mobility trace.
"""

from __future__ import annotations

import numpy as np

# Stream purposes. Values are part of the reproducibility contract: changing
# them changes every seeded trace.
MOBILITY = 0
FADING = 1
POLICY = 2
PLACEMENT = 3
TRAINING = 4
MAP_GEN = 5
BENCH = 6


def stream(master_seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Independent generator for (master seed, purpose, index)."""
    ss = np.random.SeedSequence(entropy=int(master_seed) & ((1 << 63) - 1),
                                spawn_key=(int(purpose), int(index)))
    return np.random.default_rng(ss)


def episode_stream(master_seed: int, episode_seed: int, purpose: int) -> np.random.Generator:
    """Generator for one purpose inside one seeded episode."""
    ss = np.random.SeedSequence(
        entropy=int(master_seed) & ((1 << 63) - 1),
        spawn_key=(int(purpose), int(episode_seed) & ((1 << 63) - 1)),
    )
    return np.random.default_rng(ss)
