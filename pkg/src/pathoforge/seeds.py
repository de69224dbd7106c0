"""Deterministic 64-bit seed derivation.

Every random draw in the package goes through a counter-based generator
(numpy's Philox) keyed by an explicit 64-bit seed.  Child seeds for
subjects, samples, and pipeline stages are derived with splitmix64, a
well-known invertible mixing function, so that seed trees are stable
across platforms and worker counts.
"""

from __future__ import annotations

_M64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 round: advance by the golden-gamma and finalize."""
    x = (x + 0x9E3779B97F4A7C15) & _M64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _M64
    return h


def derive_seed(master: int, *parts: int | str) -> int:
    """Derive a child seed from a master seed and a label path.

    Integers are mixed directly, strings through FNV-1a; each part is
    folded with a splitmix64 round so (master, "a", 1) and (master, "a1")
    land in unrelated streams.
    """
    h = splitmix64(master & _M64)
    for part in parts:
        if isinstance(part, str):
            h = splitmix64(h ^ _fnv1a64(part.encode("utf-8")))
        else:
            h = splitmix64(h ^ (int(part) & _M64))
    return h
