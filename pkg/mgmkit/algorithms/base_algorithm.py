#template for decoding algorithm implementations

from __future__ import annotations
from abc import ABC, abstractmethod
import time
from typing import Callable, Optional

import numpy as np

from mgmkit.heartofitall.conditions import TaskCondition
from mgmkit.heartofitall.generation_result import GenerationResult
from mgmkit.heartofitall.tokens import MaskState

# predictor(state, condition) -> logits [n x V]; condition None means the unconditional branch
Predictor = Callable[[MaskState, Optional[TaskCondition]], np.ndarray]


# constructor
class GenerationAlgorithm(ABC):
    name = "generation"

    def __init__(self) -> None:
        self.steps_run = 0
        self._t0_ns = 0

    def _start_timer(self): self._t0_ns = time.perf_counter_ns()

    def _stop_timer(self) -> float:return (time.perf_counter_ns() - self._t0_ns) / 1_000_000_000.0

    # to be implemented by all decoders
    # returns a GenerationResult with the final tokens and per-step bookkeeping
    @abstractmethod
    def generate(self) -> GenerationResult:
        ...
