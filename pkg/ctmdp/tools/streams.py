"""Counter-based random streams keyed by (master seed, episode, purpose).

Every episode draws from its own Philox generator, so estimates do not depend
on the order in which episodes are run.
"""
from __future__ import annotations

import hashlib

import numpy as np

# Separate purposes never share a stream: logging realized actions must not
# shift the draws that drive the dynamics.
DYNAMICS = "dynamics"
ACTIONS = "actions"
START = "start"


def _tag_key(tag: str) -> int:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], byteorder="big")


def episode_stream(seed: int, episode: int, tag: str = DYNAMICS) -> np.random.Generator:
    """
    Returns the generator for one episode and purpose.

    Args:
        seed (int): Master seed (non-negative).
        episode (int): Episode index.
        tag (str): Purpose name; different tags give independent streams.

    Returns:
        np.random.Generator: A Philox-backed generator.
    """
    if seed < 0 or episode < 0:
        raise ValueError("seed and episode must be non-negative")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(episode, _tag_key(tag)))
    return np.random.Generator(np.random.Philox(sequence))


def split(seed: int, tag: str) -> int:
    """Derives a child master seed for a named sub-experiment."""
    hash_input = f"{seed}:{tag}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(hash_input).digest()[:8], byteorder="big") >> 1
