"""Counter-based random streams.

Every random draw in the package goes through :func:`stream`, which keys a
Philox generator by ``(seed, label, *indices)``. Streams are therefore
independent of call order and reproducible bit-for-bit across platforms.
"""

import hashlib

import numpy as np


def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Return a generator for the stream ``(seed, label, *indices)``.

    ``label`` names the operation (e.g. ``"partition"``); extra integer
    indices split the stream further (per user, per repeat, per edge).
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _label_key(label)]
    entropy.extend(int(i) & 0xFFFFFFFFFFFFFFFF for i in indices)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def pair_uniform(seed: int, label: str, i: int, j: int) -> float:
    """One uniform in [0,1) keyed by an unordered vertex pair."""
    a, b = (i, j) if i <= j else (j, i)
    return stream(seed, label, a, b).random()
