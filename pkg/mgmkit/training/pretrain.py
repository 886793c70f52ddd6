"""
Pretrain Module
Unconditional masked pre-training with an unmasked prompt prefix.

Per sequence: t ~ U(0, T]; with probability prompt_prob a prefix of
floor(U(prefix_range) * n) positions becomes the prompt; every other position
is masked independently with probability sin(pi t / 2T).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from mgmkit.algorithms.schedule import mask_fraction, sample_mask
from mgmkit.heartofitall.errors import ArgumentError, DomainError
from mgmkit.heartofitall.tokens import MaskState
from mgmkit.net.train import Example, train_step
from mgmkit.net.transformer import ModelParams
from mgmkit.numerics.optim import AdamW
from mgmkit.numerics.rng import RngStream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    prompt_prob: float = 0.8
    prefix_range: Tuple[float, float] = (0.0, 0.4)
    steps: int = 20000
    lr: float = 3e-4
    warmup: int = 200
    batch_tokens: int = 1024
    seed: int = 0
    T: float = 1.0

    def __post_init__(self) -> None:
        lo, hi = self.prefix_range
        if not 0.0 <= self.prompt_prob <= 1.0:
            raise DomainError(f"prompt_prob {self.prompt_prob} outside [0, 1]")
        if not 0.0 <= lo <= hi <= 1.0:
            raise DomainError(f"prefix_range {self.prefix_range} must satisfy 0 <= lo <= hi <= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingMask:
    mask: np.ndarray  # [n] bool, loss positions
    prompt_len: int
    t: float


def draw_training_mask(n: int, cfg: PretrainConfig, rng: RngStream, prompt_len: Optional[int] = None,
                       t: Optional[float] = None) -> TrainingMask:
    """
    Draw schedule time, prompt and mask for one sequence.

    Args:
        n: sequence length
        cfg: prompt policy and schedule horizon
        rng: source of every draw, consumed in a fixed order (t, prompt, mask)
        prompt_len: pin the prompt length instead of drawing it
        t: pin the schedule time instead of drawing it

    Returns:
        a TrainingMask whose mask never covers the prompt
    """
    u = rng.uniform()  # consumed even when t is pinned
    if t is None:
        t = cfg.T * (1.0 - u)  # (0, T]
    if prompt_len is None:
        prompt_len = 0
        if rng.uniform() < cfg.prompt_prob:
            lo, hi = cfg.prefix_range
            prompt_len = int(math.floor(rng.uniform(lo, hi) * n))
    if not 0 <= prompt_len <= n:
        raise ArgumentError(f"prompt length {prompt_len} outside [0, {n}]")
    mask = sample_mask(n, mask_fraction(t, cfg.T), rng)
    mask[:prompt_len] = False
    return TrainingMask(mask, prompt_len, t)


def make_example(targets: np.ndarray, drawn: TrainingMask, mask_id: int, condition=None) -> Example:
    state = MaskState.from_mask(targets, drawn.mask, mask_id, drawn.prompt_len)
    # prompt positions never enter the loss
    assert not drawn.mask[:drawn.prompt_len].any()
    return Example(state, np.asarray(targets, dtype=np.int64), drawn.mask, condition)


def pretrain_step(params: ModelParams, batch: Sequence[np.ndarray], cfg: PretrainConfig, rng: RngStream,
                  optimizer: AdamW) -> float:
    """One unconditional step over a batch of SSL-token sequences; returns the loss."""
    if not batch:
        raise ArgumentError("pretrain_step needs at least one sequence")
    mask_id = params.config.mask_id
    examples: List[Example] = []
    for seq in batch:
        seq = np.asarray(seq, dtype=np.int64)
        examples.append(make_example(seq, draw_training_mask(len(seq), cfg, rng), mask_id))
    return train_step(params, examples, optimizer)
