"""Deterministic random-stream derivation.

All randomness in a run flows from one root seed, split into independent
streams keyed by purpose (agent id, period, role). The derivation is a stable
hash, so a stream never depends on how many other streams were drawn first.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(root: int, *parts: object) -> int:
    material = "|".join([str(root)] + [repr(p) for p in parts])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(root: int, *parts: object) -> random.Random:
    return random.Random(derive_seed(root, *parts))
