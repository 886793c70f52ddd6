# training objective: cross-entropy summed over masked positions only

import numpy as np

from mgmkit.numerics import ops
from mgmkit.numerics.tensor import Tensor


def masked_loss(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    """Sum over i of mask_i * -log p(targets_i); unmasked rows are never read."""
    loss, _grad = ops.softmax_cross_entropy(logits, targets, np.asarray(mask, dtype=bool))
    return float(loss)


def masked_loss_tensor(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    return ops.cross_entropy(logits, targets, np.asarray(mask, dtype=bool))
