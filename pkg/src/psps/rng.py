"""Seed-derived random substreams that are stable under parallel scheduling."""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _encode(part: int | str) -> int:
    """Map a path component to a stable 64-bit integer (no built-in hash())."""
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Return the random generator for the substream named by ``(seed, *path)``.

    The stream depends only on the seed and the path components, never on call
    order or worker scheduling, so replicate-level work can run in any order
    and still reproduce bit-identical results.  Philox is counter-based, which
    makes unrelated substreams cheap to derive.

    Parameters
    ----------
    seed : int
        Master seed (64-bit).
    *path : int or str
        Components naming the substream, e.g. ``("labeled", replicate, attempt)``.
    """
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=tuple(_encode(p) for p in path),
    )
    return np.random.Generator(np.random.Philox(ss))
