"""
Stage Module
SSL tokens -> multi-layer acoustic tokens.

One shared network predicts the tokens of a single RVQ layer at a time. Its
input is the target layer's (partially masked) tokens; everything else
arrives additively per frame through the AcousticConditioner:

    ssl_emb[ssl]                          every position
    layer_index_emb[l]                    every position
    sum over l' < l of layer_emb[l'][...] every position
    sum over l' > l of layer_emb[l'][...] prompt positions only

Training masks one uniformly drawn layer per sequence; generation decodes
layers lowest first, each with its own iterative decode.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from mgmkit.algorithms.layerwise import LayerPredictor, LayerwiseDecoder
from mgmkit.algorithms.schedule import mask_fraction, sample_mask
from mgmkit.heartofitall.errors import ArgumentError, DomainError, ShapeError
from mgmkit.heartofitall.tokens import TOKEN_DTYPE, DecodeConfig, MaskState
from mgmkit.net.train import Conditioner, Example, batch_loss, train_step
from mgmkit.net.transformer import ModelParams, forward_graph
from mgmkit.numerics import ops
from mgmkit.numerics.optim import AdamW
from mgmkit.numerics.rng import RngStream
from mgmkit.numerics.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AcousticBatch:
    ssl_tokens: np.ndarray  # [n]
    acoustic_tokens: np.ndarray  # [L x n]
    prompt_len: int = 0

    def __post_init__(self) -> None:
        self.ssl_tokens = np.asarray(self.ssl_tokens, dtype=TOKEN_DTYPE)
        self.acoustic_tokens = np.asarray(self.acoustic_tokens, dtype=TOKEN_DTYPE)
        if self.acoustic_tokens.ndim != 2 or self.acoustic_tokens.shape[1] != self.ssl_tokens.shape[0]:
            raise ShapeError(f"acoustic tokens {self.acoustic_tokens.shape} must be [L x {self.ssl_tokens.shape[0]}]")
        if not 0 <= self.prompt_len <= self.n:
            raise ArgumentError(f"prompt_len {self.prompt_len} outside [0, {self.n}]")

    @property
    def n(self) -> int:
        return int(self.ssl_tokens.shape[0])

    @property
    def L(self) -> int:
        return int(self.acoustic_tokens.shape[0])

    def prompt(self) -> np.ndarray:
        return self.acoustic_tokens[:, :self.prompt_len]


@dataclass
class AcousticContext:
    """What the conditioner needs to build the additive stream for one target layer."""
    ssl_tokens: np.ndarray  # [n]
    tokens: np.ndarray  # [L x n]; only rows < layer and prompt columns are read
    layer: int
    prompt_len: int


class AcousticConditioner(Conditioner):
    def __init__(self, ssl_emb: np.ndarray, layer_emb: Sequence[np.ndarray], layer_index_emb: np.ndarray) -> None:
        self.ssl_emb = ssl_emb  # [V_ssl x d]
        self.layer_emb = list(layer_emb)  # L tables [K x d]
        self.layer_index_emb = layer_index_emb  # [L x d]

    @classmethod
    def create(cls, ssl_vocab: int, n_layers: int, K: int, d_model: int, rng: RngStream,
               std: float = 0.02, dtype=np.float32) -> "AcousticConditioner":
        return cls(rng.normal(0.0, std, (ssl_vocab, d_model)).astype(dtype),
                   [rng.normal(0.0, std, (K, d_model)).astype(dtype) for _ in range(n_layers)],
                   rng.normal(0.0, std, (n_layers, d_model)).astype(dtype))

    @property
    def n_layers(self) -> int:
        return len(self.layer_emb)

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {"acoustic/ssl_emb": self.ssl_emb, "acoustic/layer_index_emb": self.layer_index_emb}
        out.update({f"acoustic/layer_emb/{l}": t for l, t in enumerate(self.layer_emb)})
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "AcousticConditioner":
        L = int(np.asarray(arrays["acoustic/layer_index_emb"]).shape[0])
        return cls(np.array(arrays["acoustic/ssl_emb"]), [np.array(arrays[f"acoustic/layer_emb/{l}"]) for l in range(L)],
                   np.array(arrays["acoustic/layer_index_emb"]))

    def inject(self, ctx: AcousticContext, n: int, w: Mapping[str, Tensor]) -> Tuple[Optional[Tensor], Optional[Tensor]]:
        """
        Additive input for predicting layer `ctx.layer`: SSL tokens, the layer id
        and every lower layer at all positions.

        Layers above the target are not inputs, with one exception: inside the
        prompt columns the whole acoustic stack is given, so their embeddings are
        added there and left at zero elsewhere.
        """
        if not 0 <= ctx.layer < self.n_layers:
            raise DomainError(f"layer {ctx.layer} outside [0, {self.n_layers})")
        parts = [ops.embedding(w["acoustic/ssl_emb"], ctx.ssl_tokens),
                 ops.embedding(w["acoustic/layer_index_emb"], np.full(n, ctx.layer))]
        for l in range(ctx.layer):
            parts.append(ops.embedding(w[f"acoustic/layer_emb/{l}"], ctx.tokens[l]))
        p = ctx.prompt_len
        if p:
            # upper layers are only known inside the prompt
            for l in range(ctx.layer + 1, self.n_layers):
                rows = ops.embedding(w[f"acoustic/layer_emb/{l}"], ctx.tokens[l, :p])
                pad = Tensor(np.zeros((n - p, rows.shape[1]), dtype=rows.dtype))
                parts.append(ops.concat_rows([rows, pad]))
        return ops.add_all(parts), None


def draw_layer(L: int, rng: RngStream) -> int:
    return int(rng.integers(0, L))


def acoustic_example(batch: AcousticBatch, layer: int, mask: np.ndarray, mask_id: int) -> Example:
    if mask[:batch.prompt_len].any():
        raise ArgumentError("prompt positions cannot be masked")
    targets = batch.acoustic_tokens[layer]
    state = MaskState.from_mask(targets, mask, mask_id, batch.prompt_len)
    ctx = AcousticContext(batch.ssl_tokens, batch.acoustic_tokens, layer, batch.prompt_len)
    return Example(state, targets, mask, ctx)


def draw_acoustic_example(batch: AcousticBatch, rng: RngStream, mask_id: int, T: float = 1.0,
                          layer: Optional[int] = None) -> Example:
    """Pick a layer, draw t in (0, T], mask that layer's non-prompt tokens with probability gamma(t)."""
    drawn = draw_layer(batch.L, rng)
    layer = drawn if layer is None else layer
    t = T * (1.0 - rng.uniform())
    mask = sample_mask(batch.n, mask_fraction(t, T), rng)
    mask[:batch.prompt_len] = False
    return acoustic_example(batch, layer, mask, mask_id)


def acoustic_loss(params: ModelParams, conditioner: AcousticConditioner, examples: Sequence[Example]) -> float:
    """Batch-averaged masked loss without an update."""
    w = params.tensors()
    w.update({k: Tensor(v) for k, v in conditioner.arrays().items()})
    return float(batch_loss(params, w, examples, conditioner=conditioner).data)


def acoustic_train_step(params: ModelParams, batch: Sequence[AcousticBatch], rng: RngStream, optimizer: AdamW,
                        conditioner: AcousticConditioner, T: float = 1.0) -> float:
    """One update of the net and the conditioner over a batch of sequences; returns the loss."""
    if not batch:
        raise ArgumentError("acoustic_train_step needs at least one sequence")
    mask_id = params.config.mask_id
    examples = [draw_acoustic_example(b, rng, mask_id, T) for b in batch]
    logger.debug("acoustic step layers %s", [ex.condition.layer for ex in examples])
    return train_step(params, examples, optimizer, conditioner=conditioner)


class AcousticPredictor:
    """Layer predictor bound to one utterance's SSL tokens and acoustic prompt."""

    def __init__(self, params: ModelParams, conditioner: AcousticConditioner, ssl_tokens: np.ndarray,
                 prompt: np.ndarray) -> None:
        self.params = params
        self.conditioner = conditioner
        self.ssl_tokens = np.asarray(ssl_tokens, dtype=TOKEN_DTYPE)
        self.prompt = np.asarray(prompt, dtype=TOKEN_DTYPE)
        self._w = params.tensors()
        self._w.update({k: Tensor(v) for k, v in conditioner.arrays().items()})

    def __call__(self, layer: int, lower: np.ndarray, state: MaskState) -> np.ndarray:
        n, L = state.n, self.conditioner.n_layers
        p = self.prompt.shape[1]
        tokens = np.zeros((L, n), dtype=TOKEN_DTYPE)
        tokens[:layer] = lower
        tokens[:, :p] = self.prompt
        ctx = AcousticContext(self.ssl_tokens, tokens, layer, p)
        additive, _ = self.conditioner.inject(ctx, n, self._w)
        return forward_graph(self.params.config, self._w, state.tokens, additive).data


def acoustic_generate(params: Optional[ModelParams], ssl_tokens: np.ndarray, prompt: Optional[np.ndarray] = None,
                      steps_per_layer: int = 4, rng: Optional[RngStream] = None,
                      conditioner: Optional[AcousticConditioner] = None,
                      layer_predictor: Optional[LayerPredictor] = None, n_layers: Optional[int] = None,
                      vocab_size: Optional[int] = None, decode: Optional[DecodeConfig] = None) -> np.ndarray:
    """
    Acoustic tokens [L x n] for the given SSL tokens, decoded layer by layer.

    Args:
        params: the trained acoustic net (may be None when layer_predictor is given)
        ssl_tokens: [n]
        prompt: [L x p] acoustic prompt occupying the first p frames
        steps_per_layer: iterative decode steps for each layer
        rng: sampling noise
        conditioner: the stage's embedding tables
        layer_predictor: replaces the net, for oracles and tests
        n_layers: required with layer_predictor when no prompt is given
        vocab_size: required with layer_predictor
        decode: temperatures; its rng and steps are overridden

    Returns:
        token matrix whose prompt columns equal the prompt in every layer
    """
    ssl_tokens = np.asarray(ssl_tokens, dtype=TOKEN_DTYPE)
    if layer_predictor is None:
        if params is None or conditioner is None:
            raise ArgumentError("acoustic_generate needs params and a conditioner, or a layer_predictor")
        n_layers = conditioner.n_layers
        vocab_size = params.vocab_size
        if prompt is None:
            prompt = np.zeros((n_layers, 0), dtype=TOKEN_DTYPE)
        layer_predictor = AcousticPredictor(params, conditioner, ssl_tokens, prompt)
    else:
        if n_layers is None:
            n_layers = np.asarray(prompt).shape[0] if prompt is not None else None
        if n_layers is None or vocab_size is None:
            raise ArgumentError("a custom layer_predictor needs n_layers and vocab_size")
    if prompt is None:
        prompt = np.zeros((n_layers, 0), dtype=TOKEN_DTYPE)
    base = decode or DecodeConfig()
    cfg = DecodeConfig(steps=steps_per_layer, temperature_init=base.temperature_init, cfg_weight=0.0,
                       sample_temperature=base.sample_temperature, rng=rng or RngStream(0))
    decoder = LayerwiseDecoder(layer_predictor, n_layers, len(ssl_tokens), vocab_size, prompt, steps_per_layer, cfg)
    result = decoder.generate()
    logger.debug("%s", result)
    return result.tokens

