"""Seeded random streams.

Streams are Philox (counter-based) generators keyed by a root seed plus an
optional path of integer labels, so every (experiment, seed, ...) tuple gets an
independent, reproducible stream without sharing generator state.
"""
import hashlib

import numpy as np


def _label_to_int(label):
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("stream labels must be non-negative")
        return int(label)
    digest = hashlib.sha256(str(label).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed, *labels) -> np.random.Generator:
    """Generator for ``seed`` and a path of labels (ints or strings)."""
    ss = np.random.SeedSequence(entropy=_label_to_int(seed), spawn_key=tuple(_label_to_int(x) for x in labels))
    return np.random.Generator(np.random.Philox(ss))


def split(rng: np.random.Generator, n: int) -> list:
    """``n`` child generators derived from ``rng``'s seed sequence."""
    return [np.random.Generator(np.random.Philox(s)) for s in rng.bit_generator.seed_seq.spawn(n)]
