"""Deterministic counter-based random number generation.

Built on the splitmix64 mixing function so that the i-th draw depends only
on (seed, i). The same seed therefore produces the same sample sequence on
every platform, independent of how many values are requested per call.
Substreams derived from a string tag let independent stages of a pipeline
(geometry vs. noise, shuffling per epoch) draw without interacting.
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# uint64 arithmetic wraps; silence the overflow warnings numpy 2.x emits
_err_ignore = {"over": "ignore"}


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on uint64 arrays."""
    with np.errstate(**_err_ignore):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _hash_tag(tag: str) -> np.uint64:
    """FNV-1a over the UTF-8 bytes of a tag, for substream keying."""
    h = np.uint64(0xCBF29CE484222325)
    prime = np.uint64(0x100000001B3)
    with np.errstate(**_err_ignore):
        for b in tag.encode("utf-8"):
            h = (h ^ np.uint64(b)) * prime
    return h


class Rng:
    """Counter-based deterministic generator (splitmix64 stream)."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def substream(self, tag: str) -> "Rng":
        """Independent stream keyed by (seed, tag); does not advance self."""
        with np.errstate(**_err_ignore):
            derived = _mix(self._seed ^ _mix(_hash_tag(tag)))
        return Rng(int(derived))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(**_err_ignore):
            return _mix(self._seed + idx * _GOLDEN)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """n doubles in [low, high), open at 0 internally (safe for log)."""
        u = ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        """n standard normal doubles via Box-Muller."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n)."""
        keys = self._raw(n)
        return np.argsort(keys, kind="stable")
