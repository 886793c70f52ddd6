# residual vector quantization: each layer quantizes what the layers before it left over

from __future__ import annotations
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from mgmkit.heartofitall.errors import ArgumentError, DomainError, ShapeError
from mgmkit.numerics.rng import RngStream
from mgmkit.quantizers.codebook import (Codebook, FeatureSequence, Frames, VqStepResult, as_frames, nearest_code,
                                        vq_train_step)


@dataclass
class RvqCodebook:
    layers: List[Codebook]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ArgumentError("an RVQ stack needs at least one layer")
        dims = {cb.d for cb in self.layers}
        if len(dims) != 1:
            raise ShapeError(f"all RVQ layers must share the code dimension, got {sorted(dims)}")

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def d(self) -> int:
        return self.layers[0].d

    @classmethod
    def random(cls, L: int, K: int, d: int, rng: RngStream, scale: float = 1.0, decay: float = 0.99) -> "RvqCodebook":
        # deeper layers start smaller, they only ever see residuals
        return cls([Codebook.random(K, d, rng, scale * 0.5 ** l, decay) for l in range(L)])


def rvq_encode(x: Frames, rvq: RvqCodebook, n_layers: Optional[int] = None) -> np.ndarray:
    """Token matrix [L x n]; layer l picks the code nearest to the residual left by layers < l."""
    frames = as_frames(x)
    if frames.ndim != 2 or frames.shape[1] != rvq.d:
        raise ShapeError(f"frames {frames.shape} do not match code dimension {rvq.d}")
    L = rvq.L if n_layers is None else n_layers
    residual = frames.astype(rvq.layers[0].codes.dtype, copy=True)
    ids = np.empty((L, frames.shape[0]), dtype=np.int64)
    for l in range(L):
        cb = rvq.layers[l]
        ids[l] = nearest_code(residual, cb.codes)
        residual -= cb.codes[ids[l]]
    return ids


def rvq_decode(ids: np.ndarray, rvq: RvqCodebook) -> FeatureSequence:
    """Sum of the selected code per layer; fewer rows than rvq.L decodes a shallower stack."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[0] > rvq.L:
        raise ShapeError(f"ids must be [L x n] with L <= {rvq.L}, got {ids.shape}")
    out = np.zeros((ids.shape[1], rvq.d), dtype=rvq.layers[0].codes.dtype)
    for l, row in enumerate(ids):
        cb = rvq.layers[l]
        if row.size and (row.min() < 0 or row.max() >= cb.K):
            raise DomainError(f"layer {l} id outside [0, {cb.K}): min {row.min()}, max {row.max()}")
        out += cb.codes[row]
    return FeatureSequence(out)


def rvq_train_step(batch: Frames, rvq: RvqCodebook, commit_weight: float = 0.25,
                   rng: Optional[RngStream] = None, reseed_after: int = 200) -> List[VqStepResult]:
    """EMA-update every layer on the residual it sees; one step result per layer."""
    residual = as_frames(batch).astype(rvq.layers[0].codes.dtype, copy=True)
    steps = []
    for cb in rvq.layers:
        before = cb.codes.copy()
        steps.append(vq_train_step(residual, cb, commit_weight, rng, reseed_after))
        residual = residual - before[nearest_code(residual, before)]
    return steps
