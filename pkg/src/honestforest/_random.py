"""Deterministic stream derivation.

Every random draw in the package comes from a generator obtained with
:func:`child_rng`, keyed by ``(master_seed, purpose, index)``. Streams never
depend on scheduling order, so parallel and serial runs agree bit for bit.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_key(purpose):
    return zlib.crc32(purpose.encode("utf-8"))


def child_seed_sequence(master_seed, purpose, index=0):
    master_seed = int(master_seed) & _MASK64
    entropy = [master_seed & 0xFFFFFFFF, master_seed >> 32, _label_key(purpose), int(index)]
    return np.random.SeedSequence(entropy)


def child_rng(master_seed, purpose, index=0):
    """Generator for the stream ``(master_seed, purpose, index)``."""
    return np.random.default_rng(child_seed_sequence(master_seed, purpose, index))


def child_seed(master_seed, purpose, index=0):
    """A 63-bit integer seed derived from the stream key."""
    state = child_seed_sequence(master_seed, purpose, index).generate_state(2, np.uint32)
    return int(((int(state[0]) << 32) | int(state[1])) & ((1 << 63) - 1))


def as_seed(random_state):
    """Normalise ``None``/int/Generator into an integer master seed."""
    if random_state is None:
        return 0
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(0, 2**63 - 1))
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    raise TypeError(f"cannot derive a seed from {type(random_state).__name__}")
