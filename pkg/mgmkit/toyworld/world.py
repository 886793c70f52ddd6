"""
World Module
A synthetic speech domain with exact ground truth.

An utterance is a symbol sequence; each symbol lasts 2 to 4 frames and every
frame is phoneme_emb[symbol] + speaker_offset[speaker] + N(0, sigma^2).
All embedding tables are regenerated from the world seed, so a world is
fully described by its scalar settings.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from mgmkit.heartofitall.errors import ArgumentError, DomainError
from mgmkit.numerics.rng import RngStream, rng_fork

logger = logging.getLogger(__name__)

_MAX_REDRAWS = 100


@dataclass(eq=False)
class WorldSpec:
    seed: int = 0
    alphabet: int = 16
    speakers: int = 32
    d_feat: int = 16
    sigma: float = 0.05
    min_duration: int = 2
    max_duration: int = 4
    phoneme_scale: float = 1.0
    speaker_scale: float = 0.3
    phoneme_emb: np.ndarray = field(default=None, repr=False)  # [A x d_feat]
    speaker_offsets: np.ndarray = field(default=None, repr=False)  # [speakers x d_feat]

    def __post_init__(self) -> None:
        if self.alphabet < 1 or self.speakers < 1 or self.d_feat < 1:
            raise ArgumentError("alphabet, speakers and d_feat must be >= 1")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ArgumentError(f"duration range [{self.min_duration}, {self.max_duration}] is empty")
        if self.sigma < 0:
            raise DomainError(f"sigma must be >= 0, got {self.sigma}")
        if self.phoneme_emb is None or self.speaker_offsets is None:
            self._generate_tables()

    def _generate_tables(self) -> None:
        rng = rng_fork(RngStream(self.seed), "world-tables")
        for attempt in range(_MAX_REDRAWS):
            emb = rng.normal(0.0, self.phoneme_scale, (self.alphabet, self.d_feat))
            if self.alphabet == 1 or min_pairwise_distance(emb) >= 4 * self.sigma:
                break
            logger.warning("phoneme embeddings too close on draw %d, redrawing", attempt)
        else:
            raise DomainError(f"could not separate {self.alphabet} phonemes by 4 sigma = {4 * self.sigma}")
        self.phoneme_emb = emb.astype(np.float32)
        self.speaker_offsets = rng.normal(0.0, self.speaker_scale, (self.speakers, self.d_feat)).astype(np.float32)

    def settings(self) -> dict:
        tables = ("phoneme_emb", "speaker_offsets")
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in tables}


def min_pairwise_distance(emb: np.ndarray) -> float:
    d2 = np.sum((emb[:, None, :] - emb[None, :, :]) ** 2, axis=-1)
    d2[np.diag_indices_from(d2)] = np.inf
    return float(np.sqrt(d2.min()))


def make_world(seed: int = 0, **settings) -> WorldSpec:
    return WorldSpec(seed=seed, **settings)


@dataclass(eq=False)
class Utterance:
    symbols: np.ndarray  # [k]
    durations: np.ndarray  # [k]
    speaker: int
    features: np.ndarray = field(repr=False)  # [n x d_feat], n = sum(durations)

    def __post_init__(self) -> None:
        if int(np.sum(self.durations)) != self.features.shape[0]:
            raise ArgumentError(f"durations sum to {int(np.sum(self.durations))}, features have "
                                f"{self.features.shape[0]} frames")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def frame_symbols(self) -> np.ndarray:
        return np.repeat(self.symbols, self.durations)

    @staticmethod
    def concat(first: "Utterance", second: "Utterance") -> "Utterance":
        if first.speaker != second.speaker:
            raise ArgumentError(f"cannot join utterances of speakers {first.speaker} and {second.speaker}")
        return Utterance(np.concatenate([first.symbols, second.symbols]),
                         np.concatenate([first.durations, second.durations]),
                         first.speaker, np.concatenate([first.features, second.features]))


def render(world: WorldSpec, symbols: np.ndarray, durations: np.ndarray, speaker: int,
           rng: Optional[RngStream] = None) -> np.ndarray:
    """Feature frames for a symbol/duration sequence; noise-free when rng is None or sigma is 0."""
    frames = world.phoneme_emb[np.repeat(symbols, durations)] + world.speaker_offsets[speaker]
    if rng is not None and world.sigma > 0:
        frames = frames + rng.normal(0.0, world.sigma, frames.shape)
    return frames.astype(np.float32)


def gen_utterance(world: WorldSpec, k: int, rng: RngStream, speaker: Optional[int] = None) -> Utterance:
    if k < 1:
        raise ArgumentError(f"utterance needs at least one symbol, got k={k}")
    symbols = rng.integers(0, world.alphabet, size=k)
    durations = rng.integers(world.min_duration, world.max_duration + 1, size=k)
    if speaker is None:
        speaker = int(rng.integers(0, world.speakers))
    features = render(world, symbols, durations, speaker, rng)
    return Utterance(symbols.astype(np.int64), durations.astype(np.int64), int(speaker), features)
