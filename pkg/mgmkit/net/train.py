"""
Train Module
One optimizer step of the masked objective over a batch of examples.

The trainable set is assembled from up to three sources that share one flat
name space: the base weights, a LoRA overlay ("lora/..."), and a
conditioner's new modules ("cond/..." or "acoustic/..."). Everything else is
fed to the graph as a constant.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from mgmkit.algorithms.objective import masked_loss_tensor
from mgmkit.heartofitall.errors import ArgumentError, NumericError
from mgmkit.heartofitall.tokens import MaskState
from mgmkit.net.transformer import ModelParams, forward_graph
from mgmkit.numerics import ops
from mgmkit.numerics.optim import AdamW
from mgmkit.numerics.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class Example:
    state: MaskState  # the masked input the net sees
    targets: np.ndarray  # ground-truth ids [n]
    mask: np.ndarray  # 1 where the loss is taken [n]
    condition: Any = None  # whatever the conditioner understands; None = unconditional


class Conditioner(ABC):
    """Turns an example's condition into the net's additive stream and/or prefix."""

    @abstractmethod
    def arrays(self) -> Dict[str, np.ndarray]:
        """The conditioner's own weights, keyed in the shared flat name space."""

    @abstractmethod
    def inject(self, condition: Any, n: int, w: Mapping[str, Tensor]) -> Tuple[Optional[Tensor], Optional[Tensor]]:
        """(additive [n x d_model] or None, prefix [m x d_model] or None)."""


def _weights(params: ModelParams, trainable: Mapping[str, np.ndarray], overlay,
             conditioner: Optional[Conditioner]) -> Dict[str, Tensor]:
    sources = dict(params.arrays)
    if overlay is not None:
        sources.update(overlay.arrays())
    if conditioner is not None:
        sources.update(conditioner.arrays())
    return {k: Tensor(v, requires_grad=k in trainable, name=k) for k, v in sources.items()}


def example_loss(params: ModelParams, w: Mapping[str, Tensor], ex: Example, overlay=None,
                 conditioner: Optional[Conditioner] = None) -> Tensor:
    additive, prefix = (None, None)
    if conditioner is not None and ex.condition is not None:
        additive, prefix = conditioner.inject(ex.condition, ex.state.n, w)
    lora = overlay.view() if overlay is not None else None
    logits = forward_graph(params.config, w, ex.state.tokens, additive, prefix, lora)
    return masked_loss_tensor(logits, ex.targets, ex.mask)


def batch_loss(params: ModelParams, w: Mapping[str, Tensor], batch: Sequence[Example], overlay=None,
               conditioner: Optional[Conditioner] = None) -> Tensor:
    """masked_loss averaged over the batch."""
    losses = [example_loss(params, w, ex, overlay, conditioner) for ex in batch]
    return ops.scale(ops.add_all(losses), 1.0 / len(batch))


def trainable_arrays(params: ModelParams, overlay=None, conditioner: Optional[Conditioner] = None,
                     train_base: bool = True) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    if train_base:
        out.update(params.arrays)
    if overlay is not None:
        out.update(overlay.arrays())
    if conditioner is not None:
        out.update(conditioner.arrays())
    return out


def train_step(params: ModelParams, batch: Sequence[Example], optimizer: AdamW, overlay=None,
               conditioner: Optional[Conditioner] = None, train_base: bool = True) -> float:
    """
    One AdamW step on the batch-averaged masked loss.

    Args:
        params: base weights, updated in place when train_base is set
        batch: examples with their masked states
        optimizer: holds the moment estimates for every trainable name
        overlay: attached LoRA overlay, trained when given
        conditioner: condition modules, trained when given
        train_base: False freezes the base weights (LoRA fine-tuning)

    Returns:
        the loss before the update
    """
    if not batch:
        raise ArgumentError("train_step needs a non-empty batch")
    trainable = trainable_arrays(params, overlay, conditioner, train_base)
    w = _weights(params, trainable, overlay, conditioner)
    loss = batch_loss(params, w, batch, overlay, conditioner)
    value = float(loss.data)
    if not np.isfinite(value):
        masked = [int(np.sum(ex.mask)) for ex in batch]
        raise NumericError(f"non-finite loss {value} (batch of {len(batch)}, masked positions per example {masked})")
    loss.backward()
    grads = {k: w[k].grad for k in trainable}
    optimizer.step(trainable, grads)
    logger.debug("train_step loss=%.6f trainable=%d", value, len(trainable))
    return value
