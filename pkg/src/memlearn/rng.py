"""Labeled, counter-based random streams derived from one master seed.

Each mechanism draws from its own Philox stream keyed by a label, so turning
one mechanism on never shifts another mechanism's random sequence.
"""

import zlib

import numpy as np

_BLOCK = 4096


def substream(seed, label):
    key = zlib.crc32(label.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


class Stream:
    """Buffered uniform draws from a labeled substream.

    The hot loops ask for one number per demand access; drawing in blocks keeps
    that cheap without changing the sequence.
    """

    def __init__(self, seed, label):
        self.gen = substream(seed, label)
        self._buf = []
        self._pos = 0

    def random(self):
        if self._pos >= len(self._buf):
            self._buf = self.gen.random(_BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def randrange(self, n):
        return min(int(self.random() * n), n - 1)

    def sample(self, population, k):
        """``k`` distinct items of ``population`` (partial Fisher-Yates)."""
        pool = list(population)
        k = min(k, len(pool))
        for i in range(k):
            j = i + self.randrange(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
