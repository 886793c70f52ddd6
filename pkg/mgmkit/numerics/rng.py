# seeded random streams
# every randomized op in mgmkit takes an explicit RngStream; nothing touches global numpy state

from __future__ import annotations

import hashlib
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

_MASK64 = (1 << 64) - 1

Size = Union[None, int, Tuple[int, ...]]


class RngStream:
    """A PCG64 generator that remembers the seed it was created from."""

    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"

    # draws
    def uniform(self, low: float = 0.0, high: float = 1.0, size: Size = None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size: Size = None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: Optional[int] = None, size: Size = None):
        # high is exclusive
        return self._gen.integers(low, high, size)

    def gumbel(self, size: Size = None):
        return self._gen.gumbel(0.0, 1.0, size)

    def bernoulli(self, p: float, size: Size = None):
        return self._gen.random(size) < p

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """One draw per row of a [n x V] probability table (inverse-CDF)."""
        probs = np.asarray(probs, dtype=np.float64)
        cdf = np.cumsum(probs, axis=-1)
        u = self._gen.random(probs.shape[:-1] + (1,)) * cdf[..., -1:]
        ids = np.sum(cdf <= u, axis=-1)
        return np.minimum(ids, probs.shape[-1] - 1)

    def choice(self, n: int, p: Optional[np.ndarray] = None) -> int:
        return int(self._gen.choice(n, p=p))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    # serialisation
    def state_dict(self) -> Dict[str, Any]:
        return {"seed": self.seed, "bit_generator": self._gen.bit_generator.state}

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "RngStream":
        stream = cls(state["seed"])
        stream._gen.bit_generator.state = state["bit_generator"]
        return stream

    def clone(self) -> "RngStream":
        return RngStream.from_state(self.state_dict())


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


def rng_fork(parent: RngStream, label: str) -> RngStream:
    """Child stream that depends only on (parent.seed, label), never on how far the parent has advanced."""
    seq = np.random.SeedSequence(entropy=parent.seed, spawn_key=(_label_key(label),))
    return RngStream(int(seq.generate_state(1, dtype=np.uint64)[0]))
