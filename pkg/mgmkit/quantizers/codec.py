"""
Codec Module
Learned linear down-projection -> RVQ stack -> learned up-projection.

With one layer this is the SSL tokenizer (one token per frame); with L layers
it is the acoustic codec. The projections are trained on the feature-space
reconstruction loss through a straight-through estimator while the codebooks
follow their own EMA rule.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from mgmkit.heartofitall.errors import ShapeError
from mgmkit.numerics import ops
from mgmkit.numerics.optim import AdamW, AdamWConfig
from mgmkit.numerics.rng import RngStream
from mgmkit.numerics.tensor import Tensor
from mgmkit.quantizers.codebook import Codebook, Frames, as_frames, nearest_code
from mgmkit.quantizers.rvq import RvqCodebook, rvq_decode, rvq_encode, rvq_train_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CodecConfig:
    d_feat: int = 16
    d_code: int = 8
    n_layers: int = 1
    K: int = 256
    decay: float = 0.99
    commit_weight: float = 0.25
    reseed_after: int = 200
    lr: float = 1e-3


@dataclass
class CodecStepResult:
    feature_loss: float  # mean ||x - up(q)||^2 in feature space
    recon_losses: list  # per-layer EMA recon loss in code space
    commit_loss: float
    reseeded: int


class FeatureCodec:
    def __init__(self, config: CodecConfig, down: np.ndarray, up: np.ndarray, rvq: RvqCodebook) -> None:
        self.config = config
        self.down = down  # [d_code x d_feat]
        self.up = up  # [d_feat x d_code]
        self.rvq = rvq
        self.optimizer = AdamW(AdamWConfig(lr=config.lr, warmup=0, weight_decay=0.0))

    @classmethod
    def create(cls, config: CodecConfig, rng: RngStream) -> "FeatureCodec":
        # orthonormal rows, so the initial up-projection is the exact pseudo-inverse
        q, _ = np.linalg.qr(rng.normal(size=(config.d_feat, config.d_code)))
        down = q.T.astype(np.float32)
        up = q.astype(np.float32)
        rvq = RvqCodebook.random(config.n_layers, config.K, config.d_code, rng, decay=config.decay)
        return cls(config, down, up, rvq)

    @property
    def n_layers(self) -> int:
        return self.rvq.L

    @property
    def ssl(self) -> Codebook:
        return self.rvq.layers[0]

    def project(self, x: Frames) -> np.ndarray:
        frames = as_frames(x)
        if frames.ndim != 2 or frames.shape[1] != self.config.d_feat:
            raise ShapeError(f"features {frames.shape} do not match d_feat={self.config.d_feat}")
        return frames.astype(np.float32) @ self.down.T

    def encode(self, x: Frames, n_layers: Optional[int] = None) -> np.ndarray:
        """Token matrix [L x n]."""
        return rvq_encode(self.project(x), self.rvq, n_layers)

    def tokenize(self, x: Frames) -> np.ndarray:
        """First-layer ids [n], the SSL-token view."""
        return self.encode(x, n_layers=1)[0]

    def decode(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        return rvq_decode(ids, self.rvq).frames @ self.up.T

    def seed_codes(self, x: Frames, rng: RngStream) -> None:
        """Initialise each layer's codes from random rows of the residual it will see."""
        residual = self.project(x)
        for cb in self.rvq.layers:
            picks = rng.integers(0, residual.shape[0], size=cb.K)
            fresh = Codebook.from_codes(residual[picks], decay=cb.decay)
            cb.codes, cb.ema_counts, cb.ema_sums = fresh.codes, fresh.ema_counts, fresh.ema_sums
            cb.idle_steps[:] = 0
            residual = residual - cb.codes[nearest_code(residual, cb.codes)]

    def train_step(self, x: Frames, rng: Optional[RngStream] = None) -> CodecStepResult:
        c = self.config
        frames = as_frames(x).astype(np.float32)
        X = Tensor(frames)
        down = Tensor(self.down, requires_grad=True)
        up = Tensor(self.up, requires_grad=True)

        z = ops.linear(X, down)
        ids = rvq_encode(z.data, self.rvq)
        q = rvq_decode(ids, self.rvq).frames
        # straight-through: forward uses q, backward treats quantization as identity
        q_st = ops.add(z, Tensor(q - z.data))
        x_hat = ops.linear(q_st, up)
        recon = ops.squared_error(x_hat, X)
        commit = ops.scale(ops.squared_error(z, Tensor(q)), c.commit_weight)
        loss = ops.add(recon, commit)
        loss.backward()
        self.optimizer.step({"down": self.down, "up": self.up}, {"down": down.grad, "up": up.grad})

        # codebooks follow the frames seen in this step
        steps = rvq_train_step(z.data, self.rvq, c.commit_weight, rng, c.reseed_after)
        layer_losses = [s.recon_loss for s in steps]
        reseeded = sum(s.reseeded for s in steps)
        if reseeded:
            logger.debug("codec step re-seeded %d codes", reseeded)
        return CodecStepResult(float(recon.data), layer_losses, float(commit.data), reseeded)

    def feature_error(self, x: Frames, n_layers: Optional[int] = None) -> float:
        """Mean squared reconstruction error in feature space using the first n_layers layers."""
        frames = as_frames(x)
        ids = self.encode(frames, n_layers)
        x_hat = rvq_decode(ids, self.rvq).frames @ self.up.T
        return float(np.mean(np.sum((frames - x_hat) ** 2, axis=1)))

    # persistence
    def arrays(self) -> Dict[str, np.ndarray]:
        out = {"down": self.down, "up": self.up}
        for l, cb in enumerate(self.rvq.layers):
            out[f"{l}/codes"] = cb.codes
            out[f"{l}/ema_counts"] = cb.ema_counts
            out[f"{l}/ema_sums"] = cb.ema_sums
            out[f"{l}/idle_steps"] = cb.idle_steps.astype(np.float32)
        # AdamW moments of the projections
        out.update({f"optim/{k}": v for k, v in self.optimizer.state_arrays().items()})
        if self.optimizer.t:
            out["optim/t"] = np.array([self.optimizer.t], dtype=np.float32)
        return out

    @classmethod
    def from_arrays(cls, config: CodecConfig, arrays: Dict[str, np.ndarray]) -> "FeatureCodec":
        layers = [Codebook(np.array(arrays[f"{l}/codes"]), np.array(arrays[f"{l}/ema_counts"]),
                           np.array(arrays[f"{l}/ema_sums"]), np.array(arrays[f"{l}/idle_steps"]).astype(np.int64),
                           config.decay)
                  for l in range(config.n_layers)]
        codec = cls(config, np.array(arrays["down"]), np.array(arrays["up"]), RvqCodebook(layers))
        if "optim/t" in arrays:
            codec.optimizer.load_state(int(arrays["optim/t"][0]),
                                       {k[len("optim/"):]: v for k, v in arrays.items() if k.startswith("optim/")})
        return codec
