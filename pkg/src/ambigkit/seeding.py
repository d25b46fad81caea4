"""Deterministic per-purpose random streams.

Every random choice in the toolkit draws from a stream derived from the
single master seed, a purpose tag, and (usually) a sample id. Streams keyed
by sample id are insensitive to dataset ordering: adding or removing samples
never reshuffles the choices made for the others.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(master_seed: int, purpose: str, *parts: str | int) -> int:
    """Derive a child seed from the master seed, a purpose tag, and key parts."""
    material = ":".join([str(master_seed), purpose, *map(str, parts)])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(master_seed: int, purpose: str, *parts: str | int) -> random.Random:
    """Seeded generator for one (purpose, key) stream."""
    return random.Random(derive_seed(master_seed, purpose, *parts))
