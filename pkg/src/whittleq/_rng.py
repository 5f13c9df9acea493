"""Deterministic seed derivation.

Every run in an experiment gets its own 64-bit seed derived from the master
seed and the run coordinates by SplitMix64 finalizer mixing. Distinct
coordinate tuples map to distinct seeds for any grid we can enumerate, and the
derivation is stable across platforms (pure integer arithmetic mod 2**64).
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Stream ids keep unrelated consumers of the master seed apart.
STREAM_TABULAR = 1
STREAM_LINEAR = 2
STREAM_NEURAL = 3
STREAM_C0 = 4
STREAM_GAP = 5
STREAM_LIPSCHITZ = 6

ALGORITHM_STREAMS = {
    "tabular": STREAM_TABULAR,
    "linear": STREAM_LINEAR,
    "neural": STREAM_NEURAL,
}


def _mix(x: int) -> int:
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return (x ^ (x >> 31)) & _MASK


def derive_seed(master: int, *coords: int) -> int:
    """Mix a master seed with integer coordinates into a 64-bit seed."""
    h = _mix((master & _MASK) + _GOLDEN)
    for c in coords:
        h = _mix(h ^ _mix(((c & _MASK) + 1) * _GOLDEN & _MASK))
    return h
