"""
LoRA Module
Low-rank overlays on the base transformer's projection matrices.

An attached overlay adds (alpha / r) * B @ A to each target matrix W
[d_out x d_in], with A [r x d_in] drawn uniformly in +-1/sqrt(d_in) and
B [d_out x r] starting at zero. The base arrays are never touched until
lora_merge folds the delta into a copy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from mgmkit.heartofitall.errors import ArgumentError
from mgmkit.net.transformer import LoraView, ModelParams, layer_matrix_names
from mgmkit.numerics.rng import RngStream

logger = logging.getLogger(__name__)

# all attention projections plus both feed-forward input projections
DEFAULT_TARGETS = ("attn.wq", "attn.wk", "attn.wv", "attn.wo", "ff.w_gate", "ff.w_up")


@dataclass
class LoraOverlay:
    rank: int
    alpha: float
    A: Dict[str, np.ndarray] = field(repr=False)
    B: Dict[str, np.ndarray] = field(repr=False)
    merged: bool = False

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @property
    def targets(self) -> List[str]:
        return list(self.A)

    @property
    def n_trainable(self) -> int:
        return int(sum(a.size for a in self.A.values()) + sum(b.size for b in self.B.values()))

    def view(self) -> LoraView:
        if self.merged:
            raise ArgumentError("overlay is already merged into the base weights")
        return LoraView(self.scale, frozenset(self.A))

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for t in self.A:
            out[f"lora/{t}/A"] = self.A[t]
            out[f"lora/{t}/B"] = self.B[t]
        return out

    def delta(self, target: str) -> np.ndarray:
        return self.scale * (self.B[target] @ self.A[target])

    @classmethod
    def from_arrays(cls, rank: int, alpha: float, arrays: Dict[str, np.ndarray]) -> "LoraOverlay":
        A, B = {}, {}
        for key, value in arrays.items():
            _, target, part = key.split("/")
            (A if part == "A" else B)[target] = np.array(value)
        return cls(int(rank), float(alpha), A, B)


def resolve_targets(params: ModelParams, targets: Optional[Iterable[str]] = None) -> List[str]:
    """Expand short names ("attn.wq") to every layer; full names pass through."""
    available = layer_matrix_names(params.config)
    out: List[str] = []
    for t in (DEFAULT_TARGETS if targets is None else targets):
        if t in available:
            out.append(t)
            continue
        expanded = [name for name in available if name.endswith("." + t)]
        if not expanded:
            raise ArgumentError(f"unknown LoRA target {t!r}")
        out.extend(expanded)
    return sorted(set(out), key=list(available).index)


def lora_attach(params: ModelParams, rank: int = 16, alpha: Optional[float] = None,
                targets: Optional[Iterable[str]] = None, rng: Optional[RngStream] = None) -> LoraOverlay:
    """New overlay; alpha defaults to 2r. Only A and B are trainable."""
    if rank < 1:
        raise ArgumentError(f"LoRA rank must be >= 1, got {rank}")
    rng = rng or RngStream(0)
    alpha = 2.0 * rank if alpha is None else float(alpha)
    shapes = layer_matrix_names(params.config)
    dtype = params.arrays["tok_emb"].dtype
    A, B = {}, {}
    for t in resolve_targets(params, targets):
        d_out, d_in = shapes[t]
        bound = 1.0 / np.sqrt(d_in)
        A[t] = rng.uniform(-bound, bound, (rank, d_in)).astype(dtype)
        B[t] = np.zeros((d_out, rank), dtype=dtype)
    overlay = LoraOverlay(rank, alpha, A, B)
    logger.info("attached rank-%d LoRA on %d matrices (%d trainable values)", rank, len(A), overlay.n_trainable)
    return overlay


def lora_merge(params: ModelParams, overlay: LoraOverlay) -> ModelParams:
    """A copy of params with every delta folded in; the overlay is marked merged."""
    if overlay.merged:
        raise ArgumentError("overlay is already merged into the base weights")
    merged = params.copy()
    for t in overlay.targets:
        w = merged.arrays[t]
        merged.arrays[t] = (w + overlay.delta(t)).astype(w.dtype, copy=False)
    overlay.merged = True
    return merged
