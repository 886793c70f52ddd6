from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np

from mgmkit.algorithms.base_algorithm import GenerationAlgorithm
from mgmkit.algorithms.iterative import IterativeDecoder
from mgmkit.heartofitall.errors import ArgumentError, ShapeError
from mgmkit.heartofitall.generation_result import GenerationResult
from mgmkit.heartofitall.tokens import TOKEN_DTYPE, DecodeConfig, MaskState, ScheduleConfig
from mgmkit.numerics.rng import RngStream, rng_fork

logger = logging.getLogger(__name__)

# layer_predictor(layer, lower_layers [layer x n], state) -> logits [n x V]
LayerPredictor = Callable[[int, np.ndarray, MaskState], np.ndarray]


class LayerwiseDecoder(GenerationAlgorithm):
    """Decodes an [L x n] token matrix one layer at a time, lowest layer first.

    Layer l runs a full iterative decode whose predictor sees only the layers
    already generated (< l); the prompt columns of every layer are pinned.
    """
    name = "layerwise"

    def __init__(self, layer_predictor: LayerPredictor, n_layers: int, length: int, vocab_size: int,
                 prompt: Optional[np.ndarray] = None, steps_per_layer: int = 4,
                 cfg: Optional[DecodeConfig] = None) -> None:
        super().__init__()
        self.layer_predictor = layer_predictor
        self.n_layers = int(n_layers)
        self.length = int(length)
        self.vocab_size = int(vocab_size)
        if prompt is None:
            prompt = np.zeros((self.n_layers, 0), dtype=TOKEN_DTYPE)
        self.prompt = np.asarray(prompt, dtype=TOKEN_DTYPE)
        if self.prompt.ndim != 2 or self.prompt.shape[0] != self.n_layers:
            raise ShapeError(f"prompt must be [{self.n_layers} x p], got {self.prompt.shape}")
        if self.prompt.shape[1] > self.length:
            raise ArgumentError(f"prompt of length {self.prompt.shape[1]} longer than the output ({self.length})")
        self.steps_per_layer = int(steps_per_layer)
        self.cfg = cfg or DecodeConfig(steps=self.steps_per_layer)

    def generate(self) -> GenerationResult:
        self._start_timer()
        rng = self.cfg.rng or RngStream(0)
        out = np.zeros((self.n_layers, self.length), dtype=TOKEN_DTYPE)
        committed_history, remask_history = [], []
        sched = ScheduleConfig(S=self.steps_per_layer)
        for layer in range(self.n_layers):
            lower = out[:layer].copy()

            def predictor(state, _cond, layer=layer, lower=lower):
                return self.layer_predictor(layer, lower, state)

            layer_cfg = DecodeConfig(steps=self.steps_per_layer, temperature_init=self.cfg.temperature_init,
                                     cfg_weight=0.0, sample_temperature=self.cfg.sample_temperature,
                                     rng=rng_fork(rng, f"layer{layer}"))
            result = IterativeDecoder(predictor, self.length, self.vocab_size, self.prompt[layer], None,
                                      layer_cfg, sched).generate()
            out[layer] = result.tokens
            committed_history.extend(result.committed_history)
            remask_history.extend(result.remask_history)
            self.steps_run += result.steps
            logger.debug("layer %d decoded in %d steps", layer, result.steps)
        return GenerationResult(self.name, out, self.prompt.shape[1], self.steps_per_layer,
                                committed_history, remask_history, self._stop_timer())
