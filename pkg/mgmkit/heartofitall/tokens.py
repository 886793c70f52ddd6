# token-level value types used by the decoder, the net and the training loops

from __future__ import annotations
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from mgmkit.heartofitall.errors import ArgumentError, ShapeError

TOKEN_DTYPE = np.int64
STREAM_DTYPE = np.dtype("<u4")  # on-disk token streams


@dataclass
class MaskState:
    """A partially decoded sequence.

    tokens holds the MASK id (== vocab size V of the predicting net) at every
    undecided position. committed marks positions that are final; the first
    prompt_len positions are always committed.
    """
    tokens: np.ndarray
    committed: np.ndarray
    prompt_len: int = 0
    mask_id: int = 0

    def __post_init__(self) -> None:
        self.tokens = np.asarray(self.tokens, dtype=TOKEN_DTYPE)
        self.committed = np.asarray(self.committed, dtype=bool)
        if self.tokens.shape != self.committed.shape or self.tokens.ndim != 1:
            raise ShapeError(f"tokens {self.tokens.shape} and committed {self.committed.shape} must be equal 1-d shapes")
        if not 0 <= self.prompt_len <= len(self.tokens):
            raise ArgumentError(f"prompt_len {self.prompt_len} outside [0, {len(self.tokens)}]")

    @property
    def n(self) -> int:
        return int(self.tokens.shape[0])

    @classmethod
    def fully_masked(cls, length: int, mask_id: int, prompt: Optional[np.ndarray] = None) -> "MaskState":
        prompt = np.zeros(0, dtype=TOKEN_DTYPE) if prompt is None else np.asarray(prompt, dtype=TOKEN_DTYPE)
        if len(prompt) > length:
            raise ArgumentError(f"prompt of length {len(prompt)} does not fit in {length} positions")
        tokens = np.full(length, mask_id, dtype=TOKEN_DTYPE)
        tokens[: len(prompt)] = prompt
        committed = np.zeros(length, dtype=bool)
        committed[: len(prompt)] = True
        return cls(tokens, committed, len(prompt), mask_id)

    @classmethod
    def from_mask(cls, targets: np.ndarray, mask: np.ndarray, mask_id: int, prompt_len: int = 0) -> "MaskState":
        # training-time view: masked positions show MASK, everything else the ground truth
        targets = np.asarray(targets, dtype=TOKEN_DTYPE)
        mask = np.asarray(mask, dtype=bool)
        if mask[:prompt_len].any():
            raise ArgumentError("prompt positions cannot be masked")
        tokens = np.where(mask, mask_id, targets)
        return cls(tokens, ~mask, prompt_len, mask_id)

    def copy(self) -> "MaskState":
        return replace(self, tokens=self.tokens.copy(), committed=self.committed.copy())

    def check(self) -> None:
        # invariants: prompt committed, committed never MASK
        if not self.committed[: self.prompt_len].all():
            raise ArgumentError("prompt position left uncommitted")
        if (self.tokens[self.committed] == self.mask_id).any():
            raise ArgumentError("committed position holds MASK")


@dataclass(frozen=True)
class ScheduleConfig:
    T: float = 1.0
    S: int = 8
    shape: str = "sine"

    def __post_init__(self) -> None:
        if self.S < 1:
            raise ArgumentError(f"S must be >= 1, got {self.S}")
        if not self.T > 0:
            raise ArgumentError(f"T must be > 0, got {self.T}")
        if self.shape != "sine":
            raise ArgumentError(f"unknown schedule shape {self.shape!r}")


@dataclass
class DecodeConfig:
    steps: int = 8
    temperature_init: float = 1.0
    cfg_weight: float = 0.0
    sample_temperature: float = 1.0
    rng: Optional["RngStream"] = field(default=None, repr=False)  # noqa: F821

    def __post_init__(self) -> None:
        if self.temperature_init < 0 or self.sample_temperature < 0:
            raise ArgumentError("temperatures must be >= 0")
        if self.cfg_weight < 0:
            raise ArgumentError(f"cfg_weight must be >= 0, got {self.cfg_weight}")

    def confidence_temperature(self, j: int, S: int) -> float:
        # linear anneal, reaches 0 at the final step
        return self.temperature_init * (S - j) / S

    def sampling_temperature(self, j: int, S: int) -> float:
        # same linear anneal, one step behind, so the last step still samples at sample_temperature / S
        return self.sample_temperature * (S - j + 1) / S
