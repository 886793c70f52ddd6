"""
Codebook Module
Single-codebook vector quantization with an EMA codebook learning rule and
dead-code re-seeding.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from mgmkit.heartofitall.errors import ArgumentError, DomainError, ShapeError
from mgmkit.numerics.rng import RngStream

logger = logging.getLogger(__name__)

_CHUNK = 512


@dataclass
class FeatureSequence:
    frames: np.ndarray  # [n x d_feat]
    frame_rate: float = 50.0  # informational

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise ShapeError(f"frames must be [n x d], got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DomainError("feature frames must be finite")

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def d(self) -> int:
        return self.frames.shape[1]


Frames = Union[FeatureSequence, np.ndarray]


def as_frames(x: Frames) -> np.ndarray:
    return x.frames if isinstance(x, FeatureSequence) else np.asarray(x)


@dataclass
class Codebook:
    codes: np.ndarray  # [K x d]
    ema_counts: np.ndarray  # [K]
    ema_sums: np.ndarray  # [K x d]
    idle_steps: np.ndarray = field(default=None)  # consecutive steps without usage
    decay: float = 0.99

    def __post_init__(self) -> None:
        if self.codes.ndim != 2 or self.codes.shape[0] < 1:
            raise ArgumentError(f"codebook needs K >= 1 codes of shape [K x d], got {self.codes.shape}")
        if self.idle_steps is None:
            self.idle_steps = np.zeros(self.K, dtype=np.int64)

    @property
    def K(self) -> int:
        return self.codes.shape[0]

    @property
    def d(self) -> int:
        return self.codes.shape[1]

    @classmethod
    def from_codes(cls, codes, prior_count: float = 1.0, decay: float = 0.99) -> "Codebook":
        codes = np.array(codes, dtype=np.float32)
        counts = np.full(codes.shape[0], prior_count, dtype=np.float32)
        return cls(codes, counts, codes * counts[:, None], decay=decay)

    @classmethod
    def random(cls, K: int, d: int, rng: RngStream, scale: float = 1.0, decay: float = 0.99) -> "Codebook":
        return cls.from_codes(rng.normal(0.0, scale, (K, d)), decay=decay)

    def copy(self) -> "Codebook":
        return Codebook(self.codes.copy(), self.ema_counts.copy(), self.ema_sums.copy(),
                        self.idle_steps.copy(), self.decay)


def nearest_code(x: np.ndarray, codes: np.ndarray) -> np.ndarray:
    # exact squared distances; np.argmin keeps the lowest index on ties
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], _CHUNK):
        block = x[start:start + _CHUNK]
        d2 = np.sum((block[:, None, :] - codes[None, :, :]) ** 2, axis=-1)
        out[start:start + _CHUNK] = np.argmin(d2, axis=1)
    return out


def vq_quantize(x: Frames, cb: Codebook) -> np.ndarray:
    frames = as_frames(x)
    if frames.ndim != 2 or frames.shape[1] != cb.d:
        raise ShapeError(f"frames {frames.shape} do not match code dimension {cb.d}")
    return nearest_code(frames, cb.codes)


def vq_dequantize(ids: np.ndarray, cb: Codebook) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= cb.K):
        raise DomainError(f"code id outside [0, {cb.K}): min {ids.min()}, max {ids.max()}")
    return cb.codes[ids]


@dataclass
class VqStepResult:
    recon_loss: float
    commit_loss: float
    codebook: Codebook
    reseeded: int = 0


def vq_train_step(batch: Frames, cb: Codebook, commit_weight: float = 0.25,
                  rng: Optional[RngStream] = None, reseed_after: int = 200) -> VqStepResult:
    """
    One EMA codebook update on a batch of (already projected) frames.

    Losses are measured against the codes before the update. Codes used in
    the batch become ema_sums / ema_counts; unused codes keep their entry and
    age by one step. With an rng, a code idle for `reseed_after` consecutive
    steps is reset to a random batch frame.
    """
    z = as_frames(batch)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ArgumentError("vq_train_step needs a non-empty batch of frames")
    if z.shape[1] != cb.d:
        raise ShapeError(f"frames {z.shape} do not match code dimension {cb.d}")

    ids = nearest_code(z, cb.codes)
    err = np.sum((z - cb.codes[ids]) ** 2, axis=1)
    recon = float(np.mean(err))
    commit = commit_weight * recon  # same quantity, gradient flows only into the encoder side

    counts = np.bincount(ids, minlength=cb.K).astype(cb.ema_counts.dtype)
    sums = np.zeros_like(cb.ema_sums)
    np.add.at(sums, ids, z.astype(sums.dtype))

    g = cb.decay
    cb.ema_counts = g * cb.ema_counts + (1.0 - g) * counts
    cb.ema_sums = g * cb.ema_sums + (1.0 - g) * sums
    used = counts > 0
    cb.codes[used] = cb.ema_sums[used] / cb.ema_counts[used, None]
    cb.idle_steps[used] = 0
    cb.idle_steps[~used] += 1

    reseeded = 0
    if rng is not None:
        dead = np.flatnonzero(cb.idle_steps >= reseed_after)
        if dead.size:
            picks = rng.integers(0, z.shape[0], size=dead.size)
            cb.codes[dead] = z[picks]
            cb.ema_counts[dead] = 1.0
            cb.ema_sums[dead] = cb.codes[dead]
            cb.idle_steps[dead] = 0
            reseeded = int(dead.size)
            logger.debug("re-seeded %d dead codes", reseeded)
    return VqStepResult(recon, commit, cb, reseeded)
