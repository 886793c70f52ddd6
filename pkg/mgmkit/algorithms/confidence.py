"""
Confidence Module
Decides which freshly drawn tokens survive a decode step.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from mgmkit.heartofitall.errors import ArgumentError, ShapeError
from mgmkit.heartofitall.tokens import MaskState
from mgmkit.numerics.rng import RngStream

# scorer(probs, drawn, state) -> confidence [n]; the hook for critic-style scoring
ConfidenceScorer = Callable[[np.ndarray, np.ndarray, MaskState], np.ndarray]


def log_prob_confidence(probs: np.ndarray, drawn: np.ndarray, state: MaskState) -> np.ndarray:
    picked = probs[np.arange(len(drawn)), drawn]
    with np.errstate(divide="ignore"):
        return np.log(picked)


def confidence_select(probs: np.ndarray, drawn: np.ndarray, state: MaskState, count: int,
                      temperature: float, rng: Optional[RngStream],
                      scorer: Optional[ConfidenceScorer] = None) -> MaskState:
    """
    Commit the drawn tokens except the `count` least confident non-committed ones.

    Args:
        probs: [n x V] model probabilities used for confidence
        drawn: token ids [n] sampled this step (ignored at committed positions)
        state: the state the tokens were drawn from
        count: how many non-committed positions go back to MASK
        temperature: scale of the Gumbel noise added to log-confidence (0 = greedy)
        rng: noise source, required when temperature > 0
        scorer: alternative confidence function

    Returns:
        the next MaskState
    """
    drawn = np.asarray(drawn, dtype=state.tokens.dtype)
    if drawn.shape != state.tokens.shape or probs.shape[0] != state.n:
        raise ShapeError(f"probs {probs.shape} / drawn {drawn.shape} do not match state length {state.n}")
    free = ~state.committed
    n_free = int(free.sum())
    if not 0 <= count <= n_free:
        raise ArgumentError(f"cannot remask {count} positions, only {n_free} are uncommitted")

    conf = (scorer or log_prob_confidence)(probs, drawn, state).astype(np.float64)
    if temperature > 0:
        if rng is None:
            raise ArgumentError("temperature > 0 needs an rng")
        conf = conf + temperature * rng.gumbel(state.n)
    # committed positions are certain and never compete for remasking
    conf[~free] = np.inf

    tokens = np.where(free, drawn, state.tokens)
    committed = np.ones(state.n, dtype=bool)
    if count:
        remask = np.argsort(conf, kind="stable")[:count]
        tokens[remask] = state.mask_id
        committed[remask] = False
    return MaskState(tokens, committed, state.prompt_len, state.mask_id)
