# classifier-free guidance on logits

import numpy as np

from mgmkit.heartofitall.errors import DomainError, expect_shape


def cfg_combine(cond_logits: np.ndarray, uncond_logits: np.ndarray, w: float) -> np.ndarray:
    """(1 + w) * cond - w * uncond.

    Evaluated as cond + w * (cond - uncond) so that w == 0 and cond == uncond
    both return cond bit for bit.
    """
    if w < 0:
        raise DomainError(f"guidance weight must be >= 0, got {w}")
    expect_shape("uncond_logits", np.shape(uncond_logits), np.shape(cond_logits))
    return cond_logits + w * (cond_logits - uncond_logits)
