"""Counter-based random streams.

Each draw is a pure function of ``(seed, scenario, unit, period, stream)``
computed with the Philox4x64-10 block cipher, so results never depend on how
many scenarios are generated, in what order, or on how many threads.  The
implementation is vectorised over numpy ``uint64`` arrays and reproduces
``numpy.random.Philox`` block for block.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

MASK64 = (1 << 64) - 1
# unit slot reserved for draws shared by every unit (the common factor)
COMMON = MASK64


def _mulhilo(a, b):
    a0, a1 = a & _LO32, a >> _S32
    b0, b1 = b & _LO32, b >> _S32
    p00, p01, p10, p11 = a0 * b0, a0 * b1, a1 * b0, a1 * b1
    mid = (p00 >> _S32) + (p01 & _LO32) + (p10 & _LO32)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(counter, key, rounds: int = 10):
    """Encrypt counter blocks.

    ``counter`` has shape ``(..., 4)`` and ``key`` shape ``(2,)``; both are
    interpreted as uint64.  Returns an array shaped like ``counter``.
    """
    c = np.asarray(counter, dtype=np.uint64)
    c0, c1, c2, c3 = (c[..., i].copy() for i in range(4))
    k0, k1 = (np.uint64(int(k) & MASK64) for k in key)
    with np.errstate(over="ignore"):
        for _ in range(rounds):
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return np.stack([c0, c1, c2, c3], axis=-1)


def seed_key(seed: int) -> tuple[int, int]:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return seed & MASK64, (seed >> 64) & MASK64


def blocks(seed: int, scenarios, units, periods, stream: int = 0):
    """Random 4-word blocks on the grid scenarios x units x periods."""
    s = np.asarray(scenarios, dtype=np.uint64).reshape(-1, 1, 1)
    u = np.asarray(units, dtype=np.uint64).reshape(1, -1, 1)
    p = np.asarray(periods, dtype=np.uint64).reshape(1, 1, -1)
    shape = np.broadcast_shapes(s.shape, u.shape, p.shape)
    ctr = np.empty(shape + (4,), dtype=np.uint64)
    ctr[..., 0] = s
    ctr[..., 1] = u
    ctr[..., 2] = p
    ctr[..., 3] = np.uint64(stream)
    return philox4x64(ctr, seed_key(seed))


def to_unit_interval(word):
    """53-bit uniform on [0, 1)."""
    return (np.asarray(word, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def to_open_interval(word):
    """52-bit midpoint uniform on (0, 1); the largest value stays below 1.0."""
    return ((np.asarray(word, dtype=np.uint64) >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52


def to_normal(word):
    return ndtri(to_open_interval(word))
