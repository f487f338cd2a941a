"""Reproducible random streams built on the Philox counter-based generator.

Every random draw in this package comes from a named stream identified by
``(master_seed, replication, tag)``. Stream tags in use:

* ``"phi"`` / ``"xi"``   -- inner / outer sampling of the two-level solver
* ``"theta_1"`` ... ``"theta_N"`` -- per-level sampling of the multi-level
  solver
* ``"init"``  -- tracker initialisation and instance generation
* ``"metrics"`` -- Monte-Carlo diagnostics (never consumed by solver updates)

Key derivation (documented so ports in other languages can reproduce the
stream *structure*; bitwise cross-language equality of the draws themselves
is not a goal):

1. ``h = splitmix64(splitmix64(master_seed) ^ replication)``
2. ``h = splitmix64(h ^ fnv1a64(tag))`` where ``fnv1a64`` hashes the UTF-8
   bytes of the tag,
3. the two 64-bit Philox key words are ``splitmix64(h)`` and
   ``splitmix64(splitmix64(h))``.

Philox is a 64-bit counter-based generator; numpy's implementation is
``numpy.random.Philox`` (4x64, 2-word key).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> int:
    """One SplitMix64 mixing step (finalizer of the SplitMix generator)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash of the UTF-8 encoding of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def stream_key(master_seed: int, replication: int, tag: str) -> tuple[int, int]:
    """Two 64-bit Philox key words for the named stream."""
    h = splitmix64(splitmix64(master_seed & _MASK64) ^ (replication & _MASK64))
    h = splitmix64(h ^ fnv1a64(tag))
    return splitmix64(h), splitmix64(splitmix64(h))


def make_stream(master_seed: int, replication: int, tag: str) -> np.random.Generator:
    """Independent generator for the named stream."""
    key = np.array(stream_key(master_seed, replication, tag), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class SampleStreams:
    """Lazy bundle of named streams sharing (master_seed, replication)."""

    def __init__(self, master_seed: int, replication: int = 0):
        self.master_seed = int(master_seed)
        self.replication = int(replication)
        self._streams: dict[str, np.random.Generator] = {}
        self._aliases: dict[str, str] = {}

    def alias(self, logical: str, actual: str) -> None:
        """Make requests for ``logical`` resolve to the ``actual`` tag.

        Lets two solvers share a sample stream (e.g. a two-level run and its
        multi-level rewrite drawing from the same "phi"/"xi" sequences).
        """
        if logical != actual:
            self._aliases[logical] = actual

    def stream(self, tag: str) -> np.random.Generator:
        tag = self._aliases.get(tag, tag)
        gen = self._streams.get(tag)
        if gen is None:
            gen = make_stream(self.master_seed, self.replication, tag)
            self._streams[tag] = gen
        return gen
