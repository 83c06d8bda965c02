"""Seeded randomness with splittable substreams.

All randomness in this package flows from a single 64-bit seed through
PCG64 generators derived here. Substreams are split with
``numpy.random.SeedSequence`` spawn keys, so every (seed, path) pair maps
to one fixed, documented stream: results never depend on call order,
global state, or how many other streams were drawn in between.

String path elements (roles like ``"run"`` or ``"noise"``) are hashed to
32-bit keys with BLAKE2s, which is stable across platforms and Python
versions, unlike the builtin ``hash``.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["make_rng", "substream", "child_seed"]


def _key(part) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.blake2s(part.encode("utf-8")).digest()[:4], "little")
    part = int(part)
    if part < 0:
        raise ValueError(f"substream path elements must be non-negative, got {part}")
    return part


def substream(seed: int, *path) -> np.random.Generator:
    """PCG64 generator for the substream identified by (seed, *path).

    ``path`` elements may be non-negative ints (run/cluster/trial indices)
    or strings (roles), mixed freely.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


def make_rng(seed: int) -> np.random.Generator:
    """Root generator for a bare seed (no substream path)."""
    return substream(seed)


def child_seed(seed: int, *path) -> int:
    """A 64-bit integer seed derived deterministically from (seed, *path).

    Used where an API takes a plain seed (e.g. one clustering run) but the
    caller owns a master seed.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])
