"""
Counter-based random streams

Every random draw in training and data generation comes from a Philox
generator keyed by (seed, *counters), so a draw depends only on where it
happens (epoch, step, item, purpose) and never on what was drawn before.
"""

from typing import Sequence

import numpy as np

from .exceptions import ConfigError

# Stream tags keep unrelated draws apart under the same (seed, epoch, step).
STREAM_SHUFFLE = 1
STREAM_LANGUAGE = 2
STREAM_DROPOUT = 3
STREAM_SYNTH = 4

SEED_MASK = (1 << 64) - 1


def check_seed(seed: int) -> int:
    """Validate a 64-bit unsigned seed"""
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    if seed < 0 or seed > SEED_MASK:
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
    return int(seed)


def counter_rng(seed: int, *counters: int) -> np.random.Generator:
    """Philox generator keyed by the seed and a tuple of counters"""
    entropy: Sequence[int] = [check_seed(seed)] + [int(c) for c in counters]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *counters: int) -> int:
    """Deterministic 64-bit child seed"""
    state = np.random.SeedSequence([check_seed(seed)] + [int(c) for c in counters])
    return int(state.generate_state(1, dtype=np.uint64)[0])
