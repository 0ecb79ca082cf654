"""Stable, process-independent seed derivation.

Python's builtin hash() is salted per process, so anything that must be
reproducible across runs (simulation noise, prompt shuffles, dataset
sampling) derives its RNG seed from a SHA-256 digest instead.
"""

from __future__ import annotations

import hashlib
import random

_SEP = b"\x1f"


def stable_hash64(*parts: object) -> int:
    """Collapse the given parts into a stable 64-bit unsigned integer."""
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(_SEP)
    return int.from_bytes(h.digest()[:8], "big")


def stable_rng(*parts: object) -> random.Random:
    """A random.Random seeded only by the given parts."""
    return random.Random(stable_hash64(*parts))


def fingerprint(data: bytes, length: int = 12) -> str:
    """Short hex fingerprint of a byte string (config files, templates)."""
    return hashlib.sha256(data).hexdigest()[:length]
