# mask schedule: how much of the sequence is masked at schedule time t

import math

import numpy as np

from mgmkit.heartofitall.errors import DomainError
from mgmkit.heartofitall.tokens import ScheduleConfig
from mgmkit.numerics.rng import RngStream


def mask_fraction(t: float, T: float = 1.0) -> float:
    """gamma(t) = sin(pi t / 2T) for 0 <= t <= T."""
    if not 0.0 <= t <= T:
        raise DomainError(f"schedule time {t} outside [0, {T}]")
    return math.sin(math.pi * t / (2.0 * T))


def sample_mask(n: int, fraction: float, rng: RngStream) -> np.ndarray:
    """Each position masked independently with probability `fraction`."""
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"mask fraction {fraction} outside [0, 1]")
    return rng.bernoulli(fraction, n)


def remask_count(n: int, j: int, cfg: ScheduleConfig) -> int:
    """floor(n * cos(pi j / 2S)): tokens sent back to MASK after decode step j of S.

    n counts only the non-prompt positions.
    """
    if not 1 <= j <= cfg.S:
        raise DomainError(f"decode step {j} outside [1, {cfg.S}]")
    if j == cfg.S:
        return 0
    return int(math.floor(n * math.cos(math.pi * j / (2 * cfg.S))))
