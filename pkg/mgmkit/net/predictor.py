# binds weights, overlay and conditioner into the predictor signature iterative_decode expects

from __future__ import annotations
from typing import Optional

import numpy as np

from mgmkit.heartofitall.conditions import TaskCondition
from mgmkit.heartofitall.tokens import MaskState
from mgmkit.net.train import Conditioner
from mgmkit.net.transformer import ModelParams, forward_graph
from mgmkit.numerics.tensor import Tensor


class NetPredictor:
    def __init__(self, params: ModelParams, conditioner: Optional[Conditioner] = None, overlay=None) -> None:
        self.params = params
        self.conditioner = conditioner
        self.overlay = overlay
        # constant view of every weight, built once
        self._w = params.tensors()
        if overlay is not None:
            self._w.update({k: Tensor(v) for k, v in overlay.arrays().items()})
        if conditioner is not None:
            self._w.update({k: Tensor(v) for k, v in conditioner.arrays().items()})

    @property
    def vocab_size(self) -> int:
        return self.params.vocab_size

    def __call__(self, state: MaskState, cond: Optional[TaskCondition]) -> np.ndarray:
        additive, prefix = None, None
        if cond is not None and self.conditioner is not None:
            additive, prefix = self.conditioner.inject(cond, state.n, self._w)
        lora = self.overlay.view() if self.overlay is not None else None
        return forward_graph(self.params.config, self._w, state.tokens, additive, prefix, lora).data
