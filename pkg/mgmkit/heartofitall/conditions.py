# task conditions (the `c` fed to a fine-tuned model)

from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from mgmkit.heartofitall.errors import ArgumentError, ShapeError


class ConditionKind(str, Enum):
    NONE = "none"
    NON_FRAME_LEVEL = "non_frame_level"    # symbol sequence, concatenated as a prefix
    FRAME_LEVEL = "frame_level"            # continuous frames, interpolated + adapter
    COMPOSITE = "composite"                # both channels at once (text-guided extraction)


_FIELDS = {
    ConditionKind.NONE: (False, False),
    ConditionKind.NON_FRAME_LEVEL: (True, False),
    ConditionKind.FRAME_LEVEL: (False, True),
    ConditionKind.COMPOSITE: (True, True),
}


@dataclass(frozen=True)
class TaskCondition:
    kind: ConditionKind = ConditionKind.NONE
    symbols: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        has = (self.symbols is not None, self.features is not None)
        wanted = _FIELDS[self.kind]
        if has != wanted:
            raise ArgumentError(
                f"{self.kind.value} condition needs symbols={wanted[0]} features={wanted[1]}, "
                f"got symbols={has[0]} features={has[1]}")
        if has[0] and np.asarray(self.symbols).ndim != 1:
            raise ShapeError(f"symbols must be 1-d, got shape {np.shape(self.symbols)}")
        if has[1] and np.asarray(self.features).ndim != 2:
            raise ShapeError(f"features must be [m x d_c], got shape {np.shape(self.features)}")

    @classmethod
    def none(cls) -> "TaskCondition":
        return cls(ConditionKind.NONE)

    @classmethod
    def text(cls, symbols) -> "TaskCondition":
        return cls(ConditionKind.NON_FRAME_LEVEL, symbols=np.asarray(symbols, dtype=np.int64))

    @classmethod
    def frames(cls, features) -> "TaskCondition":
        return cls(ConditionKind.FRAME_LEVEL, features=np.asarray(features, dtype=np.float32))

    @classmethod
    def composite(cls, symbols, features) -> "TaskCondition":
        return cls(ConditionKind.COMPOSITE, symbols=np.asarray(symbols, dtype=np.int64),
                   features=np.asarray(features, dtype=np.float32))

    @property
    def is_none(self) -> bool:
        return self.kind is ConditionKind.NONE

    @property
    def has_symbols(self) -> bool:
        return self.symbols is not None

    @property
    def has_features(self) -> bool:
        return self.features is not None
