"""
Tasks Module
Builds (condition, prompt, target) samples for the fine-tuning tasks:

    tts       symbol sequence, concatenated as a prefix
    vc        the utterance re-voiced with another speaker's offset
    se        the utterance through the degradation chain (noise, reverb, band limit)
    tse       the utterance plus an interfering utterance of another speaker
    tse_text  tse with the symbol sequence as a second channel (inference only)

Targets are always the tokenized clean features. Prompt-bearing tasks take a
prompt either as a prefix of the target (training) or from another utterance
of the same speaker, joined in front of the target (evaluation).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from mgmkit.heartofitall.conditions import ConditionKind, TaskCondition
from mgmkit.heartofitall.errors import ArgumentError
from mgmkit.numerics.rng import RngStream
from mgmkit.quantizers.codebook import Codebook, vq_quantize
from mgmkit.quantizers.codec import FeatureCodec
from mgmkit.toyworld.readout import collapse
from mgmkit.toyworld.world import Utterance, WorldSpec, gen_utterance

logger = logging.getLogger(__name__)

Tokenizer = Union[FeatureCodec, Codebook]

TASK_KINDS: Dict[str, ConditionKind] = {
    "tts": ConditionKind.NON_FRAME_LEVEL,
    "vc": ConditionKind.FRAME_LEVEL,
    "se": ConditionKind.FRAME_LEVEL,
    "tse": ConditionKind.FRAME_LEVEL,
    "tse_text": ConditionKind.COMPOSITE,
}
PROMPT_TASKS = ("tts", "vc", "tse", "tse_text")


@dataclass(frozen=True)
class PromptPolicy:
    prompt_prob: float = 0.8
    prefix_range: Tuple[float, float] = (0.0, 0.4)

    def draw(self, n: int, rng: RngStream) -> int:
        if rng.uniform() >= self.prompt_prob:
            return 0
        lo, hi = self.prefix_range
        return int(math.floor(rng.uniform(lo, hi) * n))


@dataclass(frozen=True)
class Degradation:
    noise_prob: float = 0.9
    snr_range: Tuple[float, float] = (-5.0, 20.0)
    reverb_prob: float = 0.35
    reverb_kernels: Tuple[int, ...] = (2, 3, 4, 5)
    band_prob: float = 0.25
    band_keep: Tuple[float, ...] = (0.125, 0.25, 0.5)


@dataclass(eq=False)
class TaskSample:
    task: str
    condition: TaskCondition
    prompt: np.ndarray  # token ids [p]
    target: np.ndarray  # token ids [n], target[:p] == prompt
    utterance: Utterance = field(repr=False)  # clean source of target (prompt utterance joined in front)
    reference: np.ndarray = field(default=None)  # collapsed symbols of the scored region
    condition_speaker: Optional[int] = None
    degradations: List[str] = field(default_factory=list)

    @property
    def prompt_len(self) -> int:
        return int(self.prompt.shape[0])


def tokenize(tokenizer: Tokenizer, features: np.ndarray) -> np.ndarray:
    if isinstance(tokenizer, FeatureCodec):
        return tokenizer.tokenize(features)
    return vq_quantize(features, tokenizer)


# degradations

def add_noise(features: np.ndarray, snr_db: float, rng: RngStream) -> np.ndarray:
    """Gaussian noise scaled to the requested signal-to-noise ratio (RMS over all values)."""
    noise = rng.normal(0.0, 1.0, features.shape)
    rms_signal = float(np.sqrt(np.mean(np.square(features, dtype=np.float64))))
    rms_noise = float(np.sqrt(np.mean(np.square(noise))))
    scale = rms_signal / (rms_noise * 10.0 ** (snr_db / 20.0)) if rms_noise > 0 else 0.0
    return (features + scale * noise).astype(features.dtype)


def reverberate(features: np.ndarray, kernel: int) -> np.ndarray:
    """Causal moving average over the last `kernel` frames."""
    csum = np.cumsum(np.concatenate([np.zeros((1, features.shape[1])), features], axis=0), axis=0)
    idx = np.arange(1, features.shape[0] + 1)
    start = np.maximum(idx - kernel, 0)
    return ((csum[idx] - csum[start]) / (idx - start)[:, None]).astype(features.dtype)


def band_limit(features: np.ndarray, keep: float, rng: RngStream) -> np.ndarray:
    """Projection onto a random subspace keeping `keep` of the dimensions."""
    d = features.shape[1]
    k = max(1, int(round(keep * d)))
    q, _ = np.linalg.qr(rng.normal(size=(d, k)))
    return (features @ q @ q.T).astype(features.dtype)


def degrade(features: np.ndarray, rng: RngStream, cfg: Degradation = Degradation(),
            snr_db: Optional[float] = None) -> Tuple[np.ndarray, List[str]]:
    """Reverb, then band limit, then noise, each with its own probability; snr_db forces the noise."""
    out = np.asarray(features, dtype=np.float32)
    applied: List[str] = []
    noise_on = rng.uniform() < cfg.noise_prob
    drawn_snr = rng.uniform(*cfg.snr_range)
    if rng.uniform() < cfg.reverb_prob:
        kernel = int(cfg.reverb_kernels[rng.integers(0, len(cfg.reverb_kernels))])
        out = reverberate(out, kernel)
        applied.append(f"reverb:{kernel}")
    if rng.uniform() < cfg.band_prob:
        keep = float(cfg.band_keep[rng.integers(0, len(cfg.band_keep))])
        out = band_limit(out, keep, rng)
        applied.append(f"band:{keep}")
    if snr_db is not None or noise_on:
        snr = drawn_snr if snr_db is None else snr_db
        out = add_noise(out, snr, rng)
        applied.append(f"noise:{snr:.2f}dB")
    return out, applied


# condition builders: (utterance, world, rng, extras) -> (condition, condition_speaker, degradations)

def _tts(utt: Utterance, world: WorldSpec, rng: RngStream, **kw):
    return TaskCondition.text(utt.symbols), None, []


def _other_speaker(speaker: int, world: WorldSpec, rng: RngStream, pinned: Optional[int]) -> int:
    if world.speakers < 2:
        raise ArgumentError("voice conversion needs at least two speakers")
    other = pinned if pinned is not None else int(rng.integers(0, world.speakers))
    while other == speaker:
        other = int(rng.integers(0, world.speakers))
    return other


def _vc(utt: Utterance, world: WorldSpec, rng: RngStream, other_speaker: Optional[int] = None, **kw):
    other = _other_speaker(utt.speaker, world, rng, other_speaker)
    swapped = utt.features - world.speaker_offsets[utt.speaker] + world.speaker_offsets[other]
    return TaskCondition.frames(swapped), other, []


def _se(utt: Utterance, world: WorldSpec, rng: RngStream, snr_db: Optional[float] = None,
        degradation: Degradation = Degradation(), **kw):
    noisy, applied = degrade(utt.features, rng, degradation, snr_db)
    return TaskCondition.frames(noisy), None, applied


def _mixture(utt: Utterance, interferer: Optional[np.ndarray]) -> np.ndarray:
    if interferer is None:
        raise ArgumentError("target speaker extraction needs an interferer")
    interferer = np.asarray(interferer, dtype=np.float32)
    if interferer.shape != utt.features.shape:
        raise ArgumentError(f"interferer {interferer.shape} does not match target {utt.features.shape}")
    return utt.features + interferer


def _tse(utt: Utterance, world: WorldSpec, rng: RngStream, interferer: Optional[np.ndarray] = None, **kw):
    return TaskCondition.frames(_mixture(utt, interferer)), None, []


def _tse_text(utt: Utterance, world: WorldSpec, rng: RngStream, interferer: Optional[np.ndarray] = None, **kw):
    return TaskCondition.composite(utt.symbols, _mixture(utt, interferer)), None, []


TASK_BUILDERS: Dict[str, Callable] = {
    "tts": _tts,
    "vc": _vc,
    "se": _se,
    "tse": _tse,
    "tse_text": _tse_text,
}


def build_task_sample(task: str, utterance: Utterance, world: WorldSpec, tokenizer: Tokenizer, rng: RngStream,
                      prompt_utterance: Optional[Utterance] = None, prompt_len: Optional[int] = None,
                      policy: PromptPolicy = PromptPolicy(), **extras) -> TaskSample:
    """
    One (condition, prompt, target) sample.

    Args:
        task: key of TASK_BUILDERS
        utterance: the clean utterance to generate
        world: the toy world it comes from
        tokenizer: SSL tokenizer producing the targets
        rng: source of every draw
        prompt_utterance: another utterance of the same speaker to use as prompt;
            when absent the prompt is a prefix of the target drawn by `policy`
        prompt_len: pin the prefix length instead of drawing it
        policy: prefix prompt policy
        **extras: interferer (tse), snr_db / degradation (se), other_speaker (vc)

    Returns:
        the TaskSample; its reference covers only the positions after the prompt
    """
    if task not in TASK_BUILDERS:
        raise ArgumentError(f"unknown task {task!r}; known: {sorted(TASK_BUILDERS)}")
    source = utterance
    if prompt_utterance is not None and task in PROMPT_TASKS:
        source = Utterance.concat(prompt_utterance, utterance)
        prompt_len = prompt_utterance.n
    condition, cond_speaker, applied = TASK_BUILDERS[task](source, world, rng, **extras)
    target = tokenize(tokenizer, source.features).astype(np.int64)
    if task not in PROMPT_TASKS:
        prompt_len = 0
    elif prompt_len is None:
        prompt_len = policy.draw(len(target), rng)
    if not 0 <= prompt_len <= len(target):
        raise ArgumentError(f"prompt length {prompt_len} outside [0, {len(target)}]")
    scored = utterance.symbols if prompt_utterance is not None and task in PROMPT_TASKS else source.symbols
    return TaskSample(task, condition, target[:prompt_len].copy(), target, source, collapse(scored),
                      cond_speaker, applied)


def fit_length(features: np.ndarray, n: int) -> np.ndarray:
    """Tile or crop frames to exactly n rows."""
    reps = -(-n // features.shape[0])
    return np.tile(features, (reps, 1))[:n]


def draw_task_sample(task: str, world: WorldSpec, tokenizer: Tokenizer, rng: RngStream,
                     symbols_range: Tuple[int, int] = (4, 8), prompt_source: str = "prefix",
                     policy: PromptPolicy = PromptPolicy(), **extras) -> TaskSample:
    """Generate fresh utterances and build a sample; prompt_source is "prefix" or "other_utterance"."""
    lo, hi = symbols_range
    utt = gen_utterance(world, int(rng.integers(lo, hi + 1)), rng)
    prompt_utt = None
    if prompt_source == "other_utterance" and task in PROMPT_TASKS:
        prompt_utt = gen_utterance(world, int(rng.integers(lo, hi + 1)), rng, speaker=utt.speaker)
    elif prompt_source not in ("prefix", "other_utterance"):
        raise ArgumentError(f"unknown prompt source {prompt_source!r}")
    if task in ("tse", "tse_text") and "interferer" not in extras:
        speaker = (utt.speaker + 1 + int(rng.integers(0, world.speakers - 1))) % world.speakers
        other = gen_utterance(world, int(rng.integers(lo, hi + 1)), rng, speaker=speaker)
        total = utt.n + (prompt_utt.n if prompt_utt is not None else 0)
        extras["interferer"] = fit_length(other.features, total)
    return build_task_sample(task, utt, world, tokenizer, rng, prompt_utterance=prompt_utt, policy=policy, **extras)
