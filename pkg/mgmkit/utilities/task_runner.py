"""
Task Runner controller

Bridges the CLI and the trained models. Given a world, a tokenizer and the
per-task models it decodes fresh samples of one or many tasks and returns
comparable TaskEvaluation objects.
"""

from __future__ import annotations
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from mgmkit.acoustic.stage import AcousticConditioner, acoustic_generate
from mgmkit.adaptation.conditioning import TaskConditioner
from mgmkit.adaptation.lora import LoraOverlay
from mgmkit.algorithms.iterative import iterative_decode
from mgmkit.heartofitall.conditions import TaskCondition
from mgmkit.heartofitall.errors import ArgumentError
from mgmkit.heartofitall.tokens import DecodeConfig, MaskState
from mgmkit.net.predictor import NetPredictor
from mgmkit.net.transformer import ModelParams
from mgmkit.numerics.rng import RngStream, rng_fork
from mgmkit.quantizers.codec import FeatureCodec
from mgmkit.toyworld.readout import (Tokenizer, speaker_similarity, symbol_error_rate, symbols_from_features,
                                     tokens_to_features)
from mgmkit.toyworld.tasks import PROMPT_TASKS, TASK_BUILDERS, TaskSample, draw_task_sample

logger = logging.getLogger(__name__)

TASK_REGISTRY: Dict[str, str] = {name: name for name in TASK_BUILDERS}

# Mapping for long names to registry keys
TASK_NAME_MAPPING = {
    "text-to-speech": "tts",
    "voice-conversion": "vc",
    "speech-enhancement": "se",
    "target-speaker-extraction": "tse",
    "text-guided-tse": "tse_text",
    "tse-text": "tse_text",
}


def normalize_task_name(name: str) -> str:
    """Registry key for a short or long task name ("TTS", "text-guided TSE", "tse_text")."""
    key = name.strip().lower().replace(" ", "-")
    if key in TASK_REGISTRY:
        return key
    if key in TASK_NAME_MAPPING:
        return TASK_NAME_MAPPING[key]
    raise ArgumentError(f"unknown task {name!r}; known: {sorted(TASK_REGISTRY)}")


@dataclass
class TaskModel:
    """Everything needed to decode one task with the SSL-stage net."""
    params: ModelParams
    conditioner: Optional[TaskConditioner] = None
    overlay: Optional[LoraOverlay] = None

    def predictor(self) -> NetPredictor:
        return NetPredictor(self.params, self.conditioner, self.overlay)


@dataclass
class AcousticModel:
    params: ModelParams
    conditioner: AcousticConditioner
    codec: FeatureCodec
    steps_per_layer: int = 4


class OraclePredictor:
    """Puts all mass on the ground-truth target; decoding with it reproduces the target exactly."""

    def __init__(self, target: np.ndarray, vocab_size: int, margin: float = 50.0) -> None:
        self.target = np.asarray(target, dtype=np.int64)
        self.vocab_size = int(vocab_size)
        self.margin = margin

    def __call__(self, state: MaskState, cond: Optional[TaskCondition]) -> np.ndarray:
        logits = np.zeros((state.n, self.vocab_size))
        logits[np.arange(state.n), self.target[:state.n]] = self.margin
        return logits


@dataclass
class TaskEvaluation:
    task: str
    symbol_error_rate: float
    speaker_similarity: float
    n_samples: int
    runtime: float = 0.0
    per_sample: List[float] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {"task": self.task, "symbol_error_rate": self.symbol_error_rate,
                "speaker_similarity": self.speaker_similarity, "n_samples": self.n_samples}


@dataclass
class ComparisonResult:
    """Container for multi-task evaluations, in request order."""
    results: List[TaskEvaluation] = field(default_factory=list)

    def to_json(self) -> List[dict]:
        return [r.to_json() for r in self.results]


class TaskRunner:
    def __init__(self, world, tokenizer: Tokenizer, models: Optional[Mapping[str, TaskModel]] = None,
                 decode: Optional[DecodeConfig] = None, seed: int = 0, n_samples: int = 20,
                 prompt_source: str = "other_utterance", symbols_range=(4, 8),
                 acoustic: Optional[AcousticModel] = None, oracle: bool = False, cfg_weight: float = 2.0):
        self.world = world
        self.tokenizer = tokenizer
        self.models = dict(models or {})
        self.decode = decode or DecodeConfig()
        self.seed = seed
        self.n_samples = n_samples
        self.prompt_source = prompt_source
        self.symbols_range = tuple(symbols_range)
        self.acoustic = acoustic
        self.oracle = oracle
        self.cfg_weight = cfg_weight

    def _vocab_size(self) -> int:
        if isinstance(self.tokenizer, FeatureCodec):
            return self.tokenizer.ssl.K
        return self.tokenizer.K

    def decode_sample(self, task: str, sample: TaskSample, rng: RngStream) -> np.ndarray:
        """SSL tokens for the whole sequence, prompt included."""
        # guidance only for tasks that carry a prompt
        w = self.cfg_weight if task in PROMPT_TASKS else 0.0
        cfg = DecodeConfig(steps=self.decode.steps, temperature_init=self.decode.temperature_init, cfg_weight=w,
                           sample_temperature=self.decode.sample_temperature, rng=rng)
        if self.oracle:
            predictor = OraclePredictor(sample.target, self._vocab_size())
        else:
            if task not in self.models:
                raise ArgumentError(f"no trained model for task {task!r}; have {sorted(self.models)}")
            predictor = self.models[task].predictor()
        return iterative_decode(predictor, len(sample.target), sample.prompt, sample.condition, cfg,
                                vocab_size=getattr(predictor, "vocab_size", None))

    def features_of(self, tokens: np.ndarray, sample: TaskSample, rng: RngStream) -> np.ndarray:
        """Feature frames of decoded SSL tokens, through the acoustic stage when one is configured."""
        if self.acoustic is None:
            return tokens_to_features(tokens, self.tokenizer)
        a = self.acoustic
        p = sample.prompt_len
        prompt = a.codec.encode(sample.utterance.features[:p]) if p else None
        acoustic_tokens = acoustic_generate(a.params, tokens, prompt, a.steps_per_layer, rng, a.conditioner,
                                            decode=self.decode)
        return a.codec.decode(acoustic_tokens)

    def score(self, task: str, sample: TaskSample, tokens: np.ndarray, rng: RngStream):
        """(symbol error rate, speaker similarity) of the generated part of one sample."""
        p = sample.prompt_len
        feats = self.features_of(tokens, sample, rng)[p:]
        ser = symbol_error_rate(symbols_from_features(feats, self.world), sample.reference)
        # enhancement is judged against the clean target, prompt-bearing tasks against their prompt
        reference = sample.utterance.features[:p] if p else sample.utterance.features
        return ser, speaker_similarity(feats, reference, self.world)

    def run_single_task(self, task_name: str) -> TaskEvaluation:
        """Decode and score n_samples fresh samples of one task."""
        task = normalize_task_name(task_name)
        rng = rng_fork(RngStream(self.seed), f"eval/{task}")
        t0 = time.perf_counter()
        errors, sims = [], []
        for i in range(self.n_samples):
            sample_rng = rng_fork(rng, f"sample/{i}")
            sample = draw_task_sample(task, self.world, self.tokenizer, sample_rng, self.symbols_range,
                                      self.prompt_source)
            tokens = self.decode_sample(task, sample, rng_fork(rng, f"decode/{i}"))
            ser, sim = self.score(task, sample, tokens, rng_fork(rng, f"acoustic/{i}"))
            errors.append(ser)
            sims.append(sim)
        result = TaskEvaluation(task, float(np.mean(errors)) if errors else 0.0,
                                float(np.mean(sims)) if sims else 0.0, self.n_samples,
                                time.perf_counter() - t0, errors)
        logger.info("%s: ser %.4f sim %.4f over %d samples", task, result.symbol_error_rate,
                    result.speaker_similarity, result.n_samples)
        return result

    def run_comparison(self, tasks: Sequence[str], parallel: bool = False) -> ComparisonResult:
        """
        Evaluate several tasks and return them in request order.
        If `parallel` is True, tasks are decoded in a small thread pool; every
        task draws from its own forked stream, so the numbers match the serial run.
        """
        to_run = [normalize_task_name(t) for t in tasks]
        if not to_run:
            raise ArgumentError("no tasks selected")

        results: List[TaskEvaluation] = []
        if parallel:
            with ThreadPoolExecutor(max_workers=min(4, len(to_run))) as ex:
                futs = {ex.submit(self.run_single_task, t): t for t in to_run}
                for fut in as_completed(futs):
                    results.append(fut.result())
        else:
            for t in to_run:
                results.append(self.run_single_task(t))

        order = {name: i for i, name in enumerate(to_run)}
        results.sort(key=lambda r: order.get(r.task, 999))
        return ComparisonResult(results)
