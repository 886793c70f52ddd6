"""
Gradient Check Module
Compares the analytic gradients of a Tensor graph with central finite differences.
"""
from __future__ import annotations

import logging
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from mgmkit.heartofitall.errors import NumericError
from mgmkit.numerics.rng import RngStream
from mgmkit.numerics.tensor import Tensor

logger = logging.getLogger(__name__)

LossFn = Callable[[Dict[str, Tensor]], Tensor]


def _evaluate(loss_fn: LossFn, arrays: Mapping[str, np.ndarray]) -> float:
    value = float(loss_fn({k: Tensor(v) for k, v in arrays.items()}).data)
    if not np.isfinite(value):
        raise NumericError(f"loss is not finite: {value}")
    return value


def gradient_check(loss_fn: LossFn, params: Mapping[str, np.ndarray], epsilon: float = 1e-5,
                   max_coords: Optional[int] = None, rng: Optional[RngStream] = None) -> float:
    """
    Worst relative error between analytic and numeric gradients.

    Args:
        loss_fn: maps a dict of Tensors to a scalar Tensor
        params: the arrays to differentiate with respect to (cast to float64 here)
        epsilon: finite-difference step
        max_coords: if set, check at most this many randomly chosen coordinates per array
        rng: stream used to choose those coordinates

    Returns:
        max over checked coordinates of |a - n| / max(|a|, |n|, 1e-8)
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    loss = loss_fn(leaves)
    if not np.isfinite(loss.data):
        raise NumericError(f"loss is not finite: {loss.data}")
    loss.backward()

    worst = 0.0
    for name, arr in arrays.items():
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or RngStream(0)).permutation(flat.size)[:max_coords]
        for i in coords:
            old = flat[i]
            flat[i] = old + epsilon
            f_plus = _evaluate(loss_fn, arrays)
            flat[i] = old - epsilon
            f_minus = _evaluate(loss_fn, arrays)
            flat[i] = old
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
                logger.debug("gradcheck %s[%d]: analytic=%.6e numeric=%.6e rel=%.3e", name, i, a, numeric, err)
    return worst
