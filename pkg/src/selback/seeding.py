"""Deterministic sub-seed derivation.

Every randomized stage derives its own seed from the experiment master seed,
a purpose string, and an index. Re-running any single stage in isolation
therefore reproduces it exactly, independent of scheduling order.
"""

import hashlib

_MASK = (1 << 63) - 1


def derive_seed(master: int, purpose: str, index: int = 0) -> int:
    """Stable 63-bit seed for (master, purpose, index)."""
    digest = hashlib.sha256(f"{master}:{purpose}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & _MASK
