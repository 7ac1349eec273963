"""Seeded random streams with label-derived sub-streams.

All randomness in a run flows from one 64-bit seed. Independent parts of the
pipeline (batch sampling, evaluator noise, evolution, reports) each draw from
their own named sub-stream so that swapping one component's implementation
cannot perturb another's draws.

Derivation rule, stated so other implementations can replicate it: the
sub-stream for label L is ``PCG64(SeedSequence([seed, key]))`` where *key* is
the first 8 bytes of ``SHA-256(L)`` read as an unsigned little-endian integer.
"""
from __future__ import annotations

import hashlib

import numpy as np


def label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


def substream(seed: int, label: str) -> np.random.Generator:
    """Generator for the named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, label_key(label)]))


def save_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of the generator's exact position."""
    return rng.bit_generator.state


def restore_state(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng
