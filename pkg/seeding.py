"""
seeding - Counter-based random stream fan-out

All randomness of a command flows from one root seed. A stream is addressed
by a tuple of non-negative integers (stream id, item index, ...), so the
numbers an item receives never depend on how many other items were drawn
before it or in which order workers ran.
"""

import numpy as np

# Stream ids. Appending new ids is safe, renumbering is not.
STREAM_CLOTH = 1
STREAM_SCENE = 2
STREAM_TURNING_POINT = 3
STREAM_GOAL = 4
STREAM_SPLIT = 5
STREAM_TRAIN_SHUFFLE = 6
STREAM_TRAIN_NOISE = 7
STREAM_MODEL_INIT = 8
STREAM_SAMPLER = 9
STREAM_BASELINE = 10
STREAM_EPISODE = 11


def child_seed_sequence(root_seed, *keys):
    """Seed sequence for the stream addressed by ``keys`` under ``root_seed``."""
    entropy = [int(root_seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError(f'seed keys must be non-negative, got {entropy}')
    return np.random.SeedSequence(entropy)


def child_rng(root_seed, *keys):
    """
    Independent numpy Generator for one addressed stream.

    Parameters
    ----------
    root_seed : int
        Root seed of the command.
    *keys : int
        Stream id followed by item counters.

    Returns
    -------
    numpy.random.Generator
    """
    return np.random.default_rng(child_seed_sequence(root_seed, *keys))

