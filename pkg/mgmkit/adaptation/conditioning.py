"""
Conditioning Module
Routes a TaskCondition into the net: symbol conditions become an embedded
prefix concatenated in front of the targets, frame-level conditions are
interpolated onto the target frames and added to the input embeddings
through a zero-initialised adapter. Composite conditions do both.
"""
from __future__ import annotations

import logging
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from mgmkit.adaptation.adapter import FrameAdapter, adapter_graph
from mgmkit.heartofitall.conditions import ConditionKind, TaskCondition
from mgmkit.heartofitall.errors import ArgumentError, DomainError, ShapeError
from mgmkit.net.train import Conditioner
from mgmkit.numerics import ops
from mgmkit.numerics.rng import RngStream
from mgmkit.numerics.tensor import Tensor

logger = logging.getLogger(__name__)


def _check_symbols(symbols: np.ndarray, rows: int) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.size and (symbols.min() < 0 or symbols.max() >= rows):
        raise DomainError(f"condition symbol outside [0, {rows}): min {symbols.min()}, max {symbols.max()}")
    return symbols


def concat_condition(cond: TaskCondition, embed_table: np.ndarray) -> np.ndarray:
    """Prefix vectors [m x d_model] for forward's extra_prefix."""
    if not cond.has_symbols:
        raise ArgumentError(f"concat_condition needs a symbol condition, got {cond.kind.value}")
    symbols = _check_symbols(cond.symbols, embed_table.shape[0])
    return np.asarray(embed_table)[symbols]


def interp_align(features: np.ndarray, n: int) -> np.ndarray:
    """Linear interpolation onto n rows with both endpoints aligned."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError(f"features must be [m x d_c], got {features.shape}")
    m = features.shape[0]
    if m == 0:
        raise ArgumentError("cannot align an empty condition")
    if n < 1:
        raise ArgumentError(f"target length must be >= 1, got {n}")
    if m == n:
        return features.copy()
    if n == 1:
        return features[:1].copy()
    src = np.arange(n) * ((m - 1) / (n - 1))
    lo = np.minimum(np.floor(src).astype(np.int64), m - 1)
    hi = np.minimum(lo + 1, m - 1)
    frac = (src - lo)[:, None].astype(features.dtype)
    return features[lo] * (1 - frac) + features[hi] * frac


def condition_dropout(cond: TaskCondition, p_drop: float, rng: RngStream) -> TaskCondition:
    """kind=none with probability p_drop, otherwise the condition unchanged."""
    if not 0.0 <= p_drop <= 1.0:
        raise DomainError(f"p_drop {p_drop} outside [0, 1]")
    if rng.uniform() < p_drop:
        return TaskCondition.none()
    return cond


class TaskConditioner(Conditioner):
    """New condition modules for fine-tuning: a symbol embedding table and a frame adapter.

    Either part may be absent; a condition whose channel has no module raises.
    """

    def __init__(self, text_emb: Optional[np.ndarray] = None, adapter: Optional[FrameAdapter] = None) -> None:
        self.text_emb = text_emb
        self.adapter = adapter

    @classmethod
    def create(cls, d_model: int, rng: RngStream, n_symbols: int = 0, d_c: int = 0,
               d_h: Optional[int] = None, dtype=np.float32) -> "TaskConditioner":
        text_emb = rng.normal(0.0, 0.02, (n_symbols, d_model)).astype(dtype) if n_symbols else None
        adapter = FrameAdapter.create(d_c, d_model, rng, d_h, dtype) if d_c else None
        return cls(text_emb, adapter)

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        if self.text_emb is not None:
            out["cond/text_emb"] = self.text_emb
        if self.adapter is not None:
            out.update(self.adapter.arrays("cond/adapter"))
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "TaskConditioner":
        text = arrays.get("cond/text_emb")
        adapter = None
        if "cond/adapter/w1" in arrays:
            adapter = FrameAdapter(np.array(arrays["cond/adapter/w1"]), np.array(arrays["cond/adapter/w2"]))
        return cls(None if text is None else np.array(text), adapter)

    @property
    def n_trainable(self) -> int:
        return int(sum(a.size for a in self.arrays().values()))

    def inject(self, condition: TaskCondition, n: int,
               w: Mapping[str, Tensor]) -> Tuple[Optional[Tensor], Optional[Tensor]]:
        if condition is None or condition.kind is ConditionKind.NONE:
            return None, None
        additive, prefix = None, None
        if condition.has_symbols:
            if "cond/text_emb" not in w:
                raise ArgumentError("symbol condition given but no condition embedding table is attached")
            table = w["cond/text_emb"]
            prefix = ops.embedding(table, _check_symbols(condition.symbols, table.shape[0]))
        if condition.has_features:
            if "cond/adapter/w1" not in w:
                raise ArgumentError("frame-level condition given but no adapter is attached")
            w1 = w["cond/adapter/w1"]
            aligned = interp_align(condition.features, n).astype(w1.dtype, copy=False)
            additive = adapter_graph(Tensor(aligned), w1, w["cond/adapter/w2"])
        return additive, prefix
