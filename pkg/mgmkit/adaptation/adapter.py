# MLP adapter for frame-level conditions: W2 . gelu(W1 . c), W2 zero at init

from __future__ import annotations
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from mgmkit.heartofitall.errors import ShapeError
from mgmkit.numerics import ops
from mgmkit.numerics.rng import RngStream
from mgmkit.numerics.tensor import Tensor


@dataclass
class FrameAdapter:
    w1: np.ndarray = field(repr=False)  # [d_h x d_c]
    w2: np.ndarray = field(repr=False)  # [d_model x d_h]

    @property
    def d_c(self) -> int:
        return self.w1.shape[1]

    @property
    def d_model(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def create(cls, d_c: int, d_model: int, rng: RngStream, d_h: Optional[int] = None,
               dtype=np.float32) -> "FrameAdapter":
        d_h = d_h or d_model
        bound = 1.0 / np.sqrt(d_c)
        w1 = rng.uniform(-bound, bound, (d_h, d_c)).astype(dtype)
        return cls(w1, np.zeros((d_model, d_h), dtype=dtype))

    def arrays(self, prefix: str = "adapter") -> Dict[str, np.ndarray]:
        return {f"{prefix}/w1": self.w1, f"{prefix}/w2": self.w2}


def adapter_graph(aligned: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    if aligned.shape[1] != w1.shape[1]:
        raise ShapeError(f"condition width {aligned.shape[1]} does not match adapter input {w1.shape[1]}")
    return ops.linear(ops.gelu(ops.linear(aligned, w1)), w2)


def adapter_inject(aligned: np.ndarray, adapter: FrameAdapter) -> np.ndarray:
    """Additive stream [n x d_model] for forward's additive_cond."""
    aligned = np.asarray(aligned)
    if aligned.ndim != 2:
        raise ShapeError(f"aligned condition must be [n x d_c], got {aligned.shape}")
    return adapter_graph(Tensor(aligned.astype(adapter.w1.dtype)), Tensor(adapter.w1), Tensor(adapter.w2)).data
