# The following code defines a data class for storing / displaying
# a decoding run's results

# example output:
# iterative: n=32, prompt=8, steps=8, committed=[13, 18, 23, 27, 29, 31, 32, 32], time=4.210 ms

from dataclasses import dataclass, field
from typing import List

import numpy as np


@dataclass
class GenerationResult:
    algorithm_name: str  # which decoder produced it
    tokens: np.ndarray  # final ids, [n] or [L x n]
    prompt_len: int  # leading positions copied from the prompt
    steps: int  # decode steps per sequence (per layer for layer-wise decoding)
    committed_history: List[int] = field(default_factory=list)  # committed count after each step
    remask_history: List[int] = field(default_factory=list)  # remask count used at each step
    runtime: float = 0.0  # seconds

    def __str__(self) -> str:
        n = self.tokens.shape[-1] if self.tokens.size else 0
        return (f"{self.algorithm_name}: n={n}, prompt={self.prompt_len}, steps={self.steps}, "
                f"committed={self.committed_history}, time={self.runtime*1000:.3f} ms")
