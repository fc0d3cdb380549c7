"""Deterministic derivation of per-stage RNG seeds from one master seed.

Every stochastic stage of a session (tomography, each tomography
setting, click-stream generation, sweep points) owns an independent
seed derived from the session's master seed and a short text label.
The mixing function is fixed so that runs are reproducible across
machines and so that inserting a new stage never shifts the seeds of
existing ones:

1. hash the label with 64-bit FNV-1a,
2. XOR with the master seed,
3. finalize with the splitmix64 output permutation.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def derive_seed(master: int, label: str) -> int:
    """Derive a 64-bit stage seed from ``master`` and a text label."""
    if master < 0:
        raise ValueError("master seed must be non-negative")
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    z = ((master & _MASK) ^ h) & _MASK
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK
