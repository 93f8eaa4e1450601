"""Deterministic derivation of independent random streams from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(root_seed: int, *path: int | str) -> np.random.Generator:
    """Return a Generator keyed by (root_seed, path).

    Path elements label a purpose ("fit", "synthesize", replicate index, ...).
    Strings are hashed with crc32, so the derived stream depends only on the
    seed and the labels, never on call order or on how work is scheduled.
    """
    if not isinstance(root_seed, (int, np.integer)):
        raise TypeError(f"root seed must be an integer, got {type(root_seed).__name__}")
    words = []
    for part in path:
        if isinstance(part, (int, np.integer)):
            words.append(int(part) & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(str(part).encode("utf8")))
    seq = np.random.SeedSequence([int(root_seed), *words])
    return np.random.default_rng(seq)
