"""Deterministic RNG derivation shared by training code."""

from __future__ import annotations

import hashlib

import numpy as np


def _stable_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def child_rng(*keys) -> np.random.Generator:
    """Generator derived from a root seed plus named sub-stream keys.

    Same keys give the same stream on every run and platform, so module
    initializers (head, adapter, encoder, ...) can draw independently
    without order effects.
    """
    return np.random.default_rng(np.random.SeedSequence([_stable_int(k) for k in keys]))
