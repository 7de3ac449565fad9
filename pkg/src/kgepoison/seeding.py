"""Deterministic derivation of named sub-seeds from one master seed."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, label: str) -> int:
    """Stable 63-bit seed for a named random stream."""
    digest = hashlib.blake2b(f"{master}:{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1
