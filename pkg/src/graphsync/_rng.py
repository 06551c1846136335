"""Seed derivation and the project-wide random generator.

Every random draw in the package comes from a counter-based Philox4x64
generator whose 128-bit key is derived from user-visible integers with a
SplitMix64 chain.  The derivation is pure integer arithmetic, so seeds are
portable: ``derive_key(seed, stream, trial)`` always names the same stream
regardless of platform, worker count, or execution order.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_key(*words: int) -> int:
    """Mix integer words into a 128-bit Philox key."""
    state = 0x243F6A8885A308D3
    for w in words:
        state = _splitmix64(state ^ (int(w) & _MASK))
        state = _splitmix64(state ^ ((int(w) >> 64) & _MASK))
    lo = _splitmix64(state)
    hi = _splitmix64(lo)
    return lo | (hi << 64)


def make_rng(*words: int) -> np.random.Generator:
    """Philox generator keyed by the mixed words."""
    return np.random.Generator(np.random.Philox(key=derive_key(*words)))


def trial_seed_words(seed_base: int, experiment_id: int, trial: int) -> tuple[int, int, int]:
    """Canonical word triple for one Monte Carlo trial."""
    return (int(seed_base), int(experiment_id), int(trial))
