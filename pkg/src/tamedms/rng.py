"""Per-sample random streams.

Every Monte Carlo sample owns three independent streams (chain, Brownian,
bridge). Streams are derived from ``(base_seed, sample, role)`` alone, so
the draw a sample sees never depends on which worker ran it or in which order.
"""
from __future__ import annotations

import numpy as np

CHAIN = 0
BROWNIAN = 1
BRIDGE = 2

_ROLES = {"chain": CHAIN, "brownian": BROWNIAN, "bridge": BRIDGE}


def stream(base_seed: int, sample: int, role: int | str) -> np.random.Generator:
    if isinstance(role, str):
        role = _ROLES[role]
    seq = np.random.SeedSequence(int(base_seed), spawn_key=(int(sample), int(role)))
    return np.random.Generator(np.random.PCG64(seq))


def exponential(rng: np.random.Generator, rate, size=None):
    """Inverse-CDF exponential draw, ``-log(U)/rate`` with ``U`` in (0, 1].

    A zero rate gives ``inf`` (absorbing state).
    """
    u = 1.0 - rng.random(size)
    rate = np.asarray(rate, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(rate > 0, -np.log(u) / rate, np.inf)
    return out if out.ndim else float(out)
