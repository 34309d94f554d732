"""Counter-based random streams with named splitting.

Every source of randomness in the system (data shuffling, masking, dropout,
parameter init, ...) pulls from its own named stream derived from a single
root seed, so any one stream can be pinned and replayed in tests without
re-running the others.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _derive_key(seed: int, path: tuple[str, ...]) -> int:
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for name in path:
        h.update(b"/")
        h.update(name.encode())
    return int.from_bytes(h.digest()[:16], "little")


class RngStream:
    """A deterministic random stream backed by the Philox counter generator.

    Identical (seed, split path, draw sequence) yields identical outputs on
    every platform. ``draws`` counts calls, which is enough to document and
    replay a pinned stream.
    """

    def __init__(self, seed: int, _path: tuple[str, ...] = ("root",)):
        self.seed = int(seed)
        self.path = _path
        # built on first draw: most streams exist only to be split further
        self._generator: np.random.Generator | None = None
        self.draws = 0

    @property
    def _gen(self) -> np.random.Generator:
        if self._generator is None:
            self._generator = np.random.Generator(
                np.random.Philox(key=_derive_key(self.seed, self.path)))
        return self._generator

    def split(self, name: str) -> "RngStream":
        """Derive an independent child stream; does not consume a draw."""
        return RngStream(self.seed, self.path + (name,))

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n), computed as a raw 64-bit draw mod n."""
        self.draws += 1
        return int(self._gen.integers(0, 2**63, dtype=np.int64) % n)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        self.draws += 1
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        self.draws += 1
        return self._gen.normal(0.0, std, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        self.draws += 1
        return self._gen.permutation(n)

    def bernoulli(self, p: float, shape=()) -> np.ndarray:
        """Boolean array, True with probability p.

        Compares raw 32-bit draws against a fixed threshold: Philox emits
        integers faster than doubles and 32 bits resolve p far below any
        probability used here.
        """
        self.draws += 1
        threshold = np.uint64(round(p * 2**32))
        return self._gen.integers(0, 2**32, size=shape,
                                  dtype=np.uint32) < threshold

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        self.draws += 1
        return self._gen.choice(n, size=k, replace=False)
