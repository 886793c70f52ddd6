"""
Transformer Module
The bidirectional Llama-style predictor used by both generation stages:
pre-norm RMS normalization, rotary positions, SwiGLU-shaped feed-forward,
no biases, full (non-causal) self-attention.

Weights live in a flat name -> array dict:
    tok_emb                       [(V + 1 + extra_tokens) x d_model], row V is MASK
    layers.{i}.attn_norm          [d_model]
    layers.{i}.attn.{wq,wk,wv,wo} [d_model x d_model]
    layers.{i}.ff_norm            [d_model]
    layers.{i}.ff.{w_gate,w_up}   [d_ff x d_model]
    layers.{i}.ff.w_down          [d_model x d_ff]
    final_norm                    [d_model]
    head                          [V x d_model]
Matrices are stored [d_out x d_in] and applied with ops.linear.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Collection, Dict, Mapping, Optional

import numpy as np

from mgmkit.heartofitall.errors import ArgumentError, ShapeError
from mgmkit.heartofitall.tokens import MaskState
from mgmkit.numerics import ops
from mgmkit.numerics.rng import RngStream
from mgmkit.numerics.tensor import Tensor

logger = logging.getLogger(__name__)

ATTN_MATRICES = ("attn.wq", "attn.wk", "attn.wv", "attn.wo")
FF_MATRICES = ("ff.w_gate", "ff.w_up", "ff.w_down")


@dataclass(frozen=True)
class NetConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    vocab_size: int = 256
    max_len: int = 512
    rope_base: float = 10000.0
    extra_tokens: int = 0
    init_std: float = 0.02

    def __post_init__(self) -> None:
        problems = []
        if self.d_model < 2 or self.n_heads < 1 or self.d_model % self.n_heads:
            problems.append(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        elif (self.d_model // self.n_heads) % 2:
            problems.append(f"head dimension {self.d_model // self.n_heads} must be even for rotary positions")
        if self.vocab_size < 2:
            problems.append(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.n_layers < 0 or self.d_ff < 1 or self.max_len < 1 or self.extra_tokens < 0:
            problems.append("n_layers, d_ff, max_len and extra_tokens must be non-negative sizes")
        if problems:
            raise ArgumentError("; ".join(problems))

    @property
    def mask_id(self) -> int:
        return self.vocab_size

    @property
    def embedding_rows(self) -> int:
        return self.vocab_size + 1 + self.extra_tokens

    def to_dict(self) -> dict:
        return asdict(self)


def param_count(cfg: NetConfig) -> int:
    """(V+1+extras)*d + L*(4d^2 + 3*d*d_ff + 2d) + d + d*V."""
    d = cfg.d_model
    per_layer = 4 * d * d + 3 * d * cfg.d_ff + 2 * d
    return cfg.embedding_rows * d + cfg.n_layers * per_layer + d + d * cfg.vocab_size


def layer_matrix_names(cfg: NetConfig) -> Dict[str, tuple]:
    """Every adaptable matrix with its (d_out, d_in)."""
    d, f = cfg.d_model, cfg.d_ff
    shapes = {"attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
              "ff.w_gate": (f, d), "ff.w_up": (f, d), "ff.w_down": (d, f)}
    return {f"layers.{i}.{k}": v for i in range(cfg.n_layers) for k, v in shapes.items()}


@dataclass
class ModelParams:
    config: NetConfig
    arrays: Dict[str, np.ndarray] = field(repr=False)

    @property
    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def tensors(self, trainable: bool = False) -> Dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=trainable, name=k) for k, v in self.arrays.items()}


def build(cfg: NetConfig, rng: RngStream, dtype=np.float32) -> ModelParams:
    """Deterministic initialization; residual output projections are scaled by 1/sqrt(2L)."""
    std = cfg.init_std
    out_std = std / np.sqrt(2.0 * max(cfg.n_layers, 1))
    d = cfg.d_model
    arrays: Dict[str, np.ndarray] = {"tok_emb": rng.normal(0.0, std, (cfg.embedding_rows, d))}
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        arrays[p + "attn_norm"] = np.ones(d)
        for name in ATTN_MATRICES:
            arrays[p + name] = rng.normal(0.0, out_std if name == "attn.wo" else std, (d, d))
        arrays[p + "ff_norm"] = np.ones(d)
        arrays[p + "ff.w_gate"] = rng.normal(0.0, std, (cfg.d_ff, d))
        arrays[p + "ff.w_up"] = rng.normal(0.0, std, (cfg.d_ff, d))
        arrays[p + "ff.w_down"] = rng.normal(0.0, out_std, (d, cfg.d_ff))
    arrays["final_norm"] = np.ones(d)
    arrays["head"] = rng.normal(0.0, std, (cfg.vocab_size, d))
    params = ModelParams(cfg, {k: np.asarray(v, dtype=dtype) for k, v in arrays.items()})
    if params.n_params != param_count(cfg):
        raise ShapeError(f"built {params.n_params} parameters, closed form gives {param_count(cfg)}")
    logger.debug("built net with %d parameters", params.n_params)
    return params


# LoRA-aware projection: y = W x + scale * B (A x) for adapted matrices
@dataclass(frozen=True)
class LoraView:
    scale: float
    targets: Collection[str]


def _project(w: Mapping[str, Tensor], name: str, x: Tensor, lora: Optional[LoraView]) -> Tensor:
    y = ops.linear(x, w[name])
    if lora is not None and name in lora.targets:
        delta = ops.linear(ops.linear(x, w[f"lora/{name}/A"]), w[f"lora/{name}/B"])
        y = ops.add(y, ops.scale(delta, lora.scale))
    return y


def forward_graph(cfg: NetConfig, w: Mapping[str, Tensor], tokens: np.ndarray,
                  additive_cond: Optional[Tensor] = None, extra_prefix: Optional[Tensor] = None,
                  lora: Optional[LoraView] = None) -> Tensor:
    """Logits Tensor [n x V] for the n target tokens; differentiable in every Tensor of `w`."""
    tokens = np.asarray(tokens, dtype=np.int64)
    n = tokens.shape[0]
    m = 0 if extra_prefix is None else extra_prefix.shape[0]
    if n + m > cfg.max_len:
        raise ArgumentError(f"sequence of {m} prefix + {n} target positions exceeds max_len={cfg.max_len}")

    x = ops.embedding(w["tok_emb"], tokens)
    if additive_cond is not None:
        if additive_cond.shape != (n, cfg.d_model):
            raise ShapeError(f"additive condition {additive_cond.shape} must be {(n, cfg.d_model)}")
        x = ops.add(x, additive_cond)
    if m:
        if extra_prefix.shape[1] != cfg.d_model:
            raise ShapeError(f"prefix width {extra_prefix.shape[1]} must equal d_model={cfg.d_model}")
        x = ops.concat_rows([extra_prefix, x])

    # one position index space over prefix + targets
    positions = np.arange(n + m)
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = ops.rms_norm(x, w[p + "attn_norm"])
        q = ops.rope(_project(w, p + "attn.wq", h, lora), cfg.n_heads, cfg.rope_base, positions)
        k = ops.rope(_project(w, p + "attn.wk", h, lora), cfg.n_heads, cfg.rope_base, positions)
        v = _project(w, p + "attn.wv", h, lora)
        x = ops.add(x, _project(w, p + "attn.wo", ops.attention(q, k, v, cfg.n_heads), lora))

        h = ops.rms_norm(x, w[p + "ff_norm"])
        gated = ops.silu_gate(_project(w, p + "ff.w_gate", h, lora), _project(w, p + "ff.w_up", h, lora))
        x = ops.add(x, _project(w, p + "ff.w_down", gated, lora))

    x = ops.rms_norm(x, w["final_norm"])
    if m:
        x = ops.slice_rows(x, m, m + n)
    return ops.linear(x, w["head"])


def forward(params: ModelParams, state: MaskState, additive_cond: Optional[np.ndarray] = None,
            extra_prefix: Optional[np.ndarray] = None, overlay=None) -> np.ndarray:
    """Logits [n x V]. Pure: no graph is recorded and nothing is mutated.

    overlay is an attached (unmerged) LoraOverlay, or None.
    """
    w = params.tensors()
    lora = None
    if overlay is not None:
        w.update({k: Tensor(v) for k, v in overlay.arrays().items()})
        lora = overlay.view()
    add = None if additive_cond is None else Tensor(np.asarray(additive_cond))
    prefix = None if extra_prefix is None else Tensor(np.asarray(extra_prefix))
    return forward_graph(params.config, w, state.tokens, add, prefix, lora).data
