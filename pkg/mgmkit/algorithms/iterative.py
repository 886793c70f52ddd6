from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from mgmkit.algorithms.base_algorithm import GenerationAlgorithm, Predictor
from mgmkit.algorithms.confidence import ConfidenceScorer, confidence_select
from mgmkit.algorithms.guidance import cfg_combine
from mgmkit.algorithms.schedule import remask_count
from mgmkit.heartofitall.conditions import TaskCondition
from mgmkit.heartofitall.errors import ArgumentError, ShapeError
from mgmkit.heartofitall.generation_result import GenerationResult
from mgmkit.heartofitall.tokens import TOKEN_DTYPE, DecodeConfig, MaskState, ScheduleConfig
from mgmkit.numerics.ops import softmax
from mgmkit.numerics.rng import RngStream

logger = logging.getLogger(__name__)


class IterativeDecoder(GenerationAlgorithm):
    """Confidence-based iterative parallel decoding from a fully masked sequence.

    Each of the S steps samples every uncommitted position from the (guided)
    logits, then sends the floor(n * cos(pi j / 2S)) least confident of them
    back to MASK. The prompt occupies the first positions and is committed
    from the start.
    """
    name = "iterative"

    def __init__(self, predictor: Predictor, length: int, vocab_size: int,
                 prompt: Optional[np.ndarray] = None, cond: Optional[TaskCondition] = None,
                 cfg: Optional[DecodeConfig] = None, sched: Optional[ScheduleConfig] = None,
                 scorer: Optional[ConfidenceScorer] = None) -> None:
        super().__init__()
        self.predictor = predictor
        self.length = int(length)
        self.vocab_size = int(vocab_size)
        self.prompt = np.zeros(0, dtype=TOKEN_DTYPE) if prompt is None else np.asarray(prompt, dtype=TOKEN_DTYPE)
        self.cond = cond
        self.cfg = cfg or DecodeConfig()
        self.sched = sched or ScheduleConfig(S=self.cfg.steps)
        self.scorer = scorer
        if len(self.prompt) > self.length:
            raise ArgumentError(f"prompt of length {len(self.prompt)} longer than the output ({self.length})")

    def _logits(self, state: MaskState) -> np.ndarray:
        logits = np.asarray(self.predictor(state, self.cond), dtype=np.float64)
        if logits.shape != (state.n, self.vocab_size):
            raise ShapeError(f"predictor returned {logits.shape}, expected {(state.n, self.vocab_size)}")
        guided = self.cond is not None and not self.cond.is_none and self.cfg.cfg_weight > 0
        if guided:
            uncond = np.asarray(self.predictor(state, None), dtype=np.float64)
            logits = cfg_combine(logits, uncond, self.cfg.cfg_weight)
        return logits

    def _draw(self, logits: np.ndarray, free: np.ndarray, rng: RngStream, temperature: float) -> np.ndarray:
        drawn = np.zeros(logits.shape[0], dtype=TOKEN_DTYPE)
        rows = logits[free]
        if not rows.size:
            return drawn
        if temperature == 0:
            drawn[free] = np.argmax(rows, axis=1)
        else:
            drawn[free] = rng.categorical(softmax(rows / temperature))
        return drawn

    def generate(self) -> GenerationResult:
        self._start_timer()
        rng = self.cfg.rng or RngStream(0)
        S = self.sched.S
        state = MaskState.fully_masked(self.length, self.vocab_size, self.prompt)
        n_free = self.length - len(self.prompt)
        committed_history, remask_history = [], []

        if self.length == 0:
            return GenerationResult(self.name, state.tokens, 0, S, runtime=self._stop_timer())

        for j in range(1, S + 1):
            logits = self._logits(state)
            free = ~state.committed
            drawn = self._draw(logits, free, rng, self.cfg.sampling_temperature(j, S))
            probs = softmax(logits)
            count = remask_count(n_free, j, self.sched)
            state = confidence_select(probs, drawn, state, count, self.cfg.confidence_temperature(j, S),
                                      rng, self.scorer)
            committed_history.append(int(state.committed.sum()))
            remask_history.append(count)
            self.steps_run += 1
            logger.debug("step %d/%d: remasked %d, committed %d", j, S, count, committed_history[-1])

        state.check()
        runtime = self._stop_timer()
        return GenerationResult(
            algorithm_name=self.name,
            tokens=state.tokens,
            prompt_len=len(self.prompt),
            steps=S,
            committed_history=committed_history,
            remask_history=remask_history,
            runtime=runtime,
        )


def iterative_decode(predictor: Predictor, length: int, prompt: Optional[np.ndarray] = None,
                     cond: Optional[TaskCondition] = None, cfg: Optional[DecodeConfig] = None,
                     sched: Optional[ScheduleConfig] = None, vocab_size: Optional[int] = None,
                     scorer: Optional[ConfidenceScorer] = None) -> np.ndarray:
    """Token ids [n]; the MASK id is vocab_size (taken from predictor.vocab_size if omitted)."""
    if vocab_size is None:
        vocab_size = getattr(predictor, "vocab_size", None)
        if vocab_size is None:
            raise ArgumentError("vocab_size is required when the predictor does not expose one")
    return IterativeDecoder(predictor, length, vocab_size, prompt, cond, cfg, sched, scorer).generate().tokens
