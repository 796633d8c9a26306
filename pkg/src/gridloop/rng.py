"""Counter-based random numbers.

Every draw is a pure function of ``(key, counter)``: the key is a 64-bit
integer derived from a scenario seed and a stream name, the counter is the
draw index. Bits come from the SplitMix64 finalizer applied to
``key + counter * 0x9E3779B97F4A7C15 (mod 2**64)``.

Rounding, documented so other implementations can reproduce the stream:

* uniform: the top 53 bits ``h >> 11`` map to ``(h + 0.5) * 2**-53``, which
  lies strictly inside (0, 1) and is exact in binary64;
* normal: Box-Muller, ``sqrt(-2 ln u1) * cos(2 pi u2)`` with ``u1`` taken
  from counter ``2c`` and ``u2`` from ``2c + 1``.

The integer part is bit-exact everywhere; the normal transform relies on the
platform's ``log``/``cos``/``sqrt`` and is reproducible wherever those are
correctly rounded (glibc, musl and the macOS libm all are for these inputs
in practice).
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def splitmix64(x) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_key(seed: int, *names: str) -> int:
    """Stable 64-bit key for ``(seed, names...)``.

    Independent of Python's hash randomization, so adding a stream never
    perturbs the draws of another one.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & _MASK64).to_bytes(8, "little"))
    for name in names:
        h.update(b"\x00")
        h.update(name.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def _bits(key, counter) -> np.ndarray:
    k = np.asarray(key, dtype=np.uint64)
    c = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return splitmix64(k + c * _GOLDEN)


def uniform(key, counter) -> np.ndarray:
    """Uniform draws in (0, 1); broadcasts over ``key`` and ``counter``."""
    h = _bits(key, counter) >> np.uint64(11)
    return (h.astype(np.float64) + 0.5) * 2.0**-53


def normal(key, counter) -> np.ndarray:
    """Standard normal draws via Box-Muller; broadcasts like :func:`uniform`."""
    c = np.asarray(counter, dtype=np.uint64)
    u1 = uniform(key, c * np.uint64(2))
    u2 = uniform(key, c * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class CounterRng:
    """Convenience wrapper holding a key and a running counter."""

    def __init__(self, seed: int, *names: str):
        self.key = derive_key(seed, *names)
        self.counter = 0

    def normal(self, size: int = 1) -> np.ndarray:
        out = normal(self.key, np.arange(self.counter, self.counter + size, dtype=np.uint64))
        self.counter += size
        return out

    def uniform(self, size: int = 1) -> np.ndarray:
        out = uniform(self.key, np.arange(self.counter, self.counter + size, dtype=np.uint64))
        self.counter += size
        return out
