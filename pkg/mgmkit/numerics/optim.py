# AdamW with decoupled weight decay and linear warmup

from __future__ import annotations
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 3e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup: int = 200


class AdamW:
    def __init__(self, config: Optional[AdamWConfig] = None) -> None:
        self.config = config or AdamWConfig()
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def lr_at(self, t: int) -> float:
        c = self.config
        if c.warmup <= 0:
            return c.lr
        return c.lr * min(1.0, t / c.warmup)

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, Optional[np.ndarray]],
             names: Optional[Iterable[str]] = None) -> None:
        """Update params[name] in place for every name (default: every name in grads).

        A missing or None gradient counts as zero, so weight decay still applies.
        """
        c = self.config
        b1, b2 = c.betas
        self.t += 1
        lr = self.lr_at(self.t)
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name in (grads.keys() if names is None else names):
            p = params[name]
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            p -= (lr * (update + c.weight_decay * p)).astype(p.dtype, copy=False)

    # checkpoint support
    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, t: int, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = int(t)
        self.m = {k[2:]: np.array(v) for k, v in arrays.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(v) for k, v in arrays.items() if k.startswith("v/")}
