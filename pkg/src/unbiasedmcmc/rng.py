"""Deterministic, splittable random number streams.

Every replicate draws from its own counter-based (Philox) stream keyed on
``(master_seed, replicate_index)``.  Streams can therefore be created on any
worker without coordination, moved between workers, and replayed exactly:
the draw sequence is a pure function of the key.

Normal variates are produced by inversion of the standard Normal CDF, so
each variate consumes exactly one uniform and the stream counter advances
deterministically with the number of draws.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = ["StreamKey", "derive_stream", "uniform", "standard_normal"]

_U64_MAX = 2**64 - 1

# Smallest point of the shifted uniform lattice; substituted for an exact 0.0
# draw so that CDF inversion never returns -inf.
_TINY = 2.0**-54


@dataclass(frozen=True)
class StreamKey:
    """Identifies one reproducible draw sequence.

    Two keys that differ in ``replicate_index`` (or ``master_seed``) yield
    statistically independent streams; ``draw_counter`` positions the stream
    within its sequence.
    """

    master_seed: int
    replicate_index: int
    draw_counter: int = 0

    def __post_init__(self):
        for name in ("master_seed", "replicate_index", "draw_counter"):
            value = getattr(self, name)
            if not (0 <= int(value) <= _U64_MAX):
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")


def derive_stream(master_seed: int, replicate_index: int, draw_counter: int = 0) -> np.random.Generator:
    """Return the generator identified by ``(master_seed, replicate_index)``.

    The two integers are used directly as the 128-bit Philox key, so no
    coordination or jump-ahead is needed to create streams concurrently.
    """
    key = StreamKey(master_seed, replicate_index, draw_counter)
    bitgen = np.random.Philox(
        key=np.array([key.master_seed, key.replicate_index], dtype=np.uint64),
        counter=key.draw_counter,
    )
    return np.random.Generator(bitgen)


def uniform(stream: np.random.Generator, size=None):
    """Draw from Uniform[0, 1)."""
    return stream.random(size)


def standard_normal(stream: np.random.Generator, size=None):
    """Draw standard Normal variates by CDF inversion (one uniform each)."""
    u = stream.random(size)
    if size is None:
        return float(ndtri(u if u > 0.0 else _TINY))
    return ndtri(np.where(u > 0.0, u, _TINY))
