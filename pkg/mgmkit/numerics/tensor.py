"""
Tensor Module
A numpy array plus the bookkeeping needed for reverse-mode gradients.

Every op in mgmkit.numerics.ops builds its output through `Tensor.from_op`,
which records the parents and a backward closure only when some parent
requires a gradient. Inference therefore allocates no graph at all.
"""
from __future__ import annotations

from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from mgmkit.heartofitall.errors import NumericError

DenseArray = np.ndarray

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        self.data: DenseArray = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: Optional[DenseArray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Iterable["Tensor"], backward: BackwardFn) -> "Tensor":
        parents = tuple(parents)
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def _topo_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        seen = set()
        stack = [(self, False)]
        # iterative DFS; recursion depth would grow with the number of layers
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if not self.requires_grad:
            return
        if grad is None:
            if self.data.size != 1:
                raise NumericError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite value in backward root {self!r}")
        self.grad = grad
        for node in reversed(self._topo_order()):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
            # interior grads are not needed once propagated
            if node._parents:
                node.grad = None
