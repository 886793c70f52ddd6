# oracle metrics: symbol readout from features/tokens, edit distance, speaker similarity

from __future__ import annotations
from typing import Sequence, Union

import numpy as np

from mgmkit.quantizers.codebook import Codebook, nearest_code
from mgmkit.quantizers.codec import FeatureCodec
from mgmkit.toyworld.world import WorldSpec

Tokenizer = Union[FeatureCodec, Codebook]


def tokens_to_features(tokens: np.ndarray, tokenizer: Tokenizer) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if isinstance(tokenizer, FeatureCodec):
        return tokenizer.decode(tokens)
    return tokenizer.codes[tokens]


def collapse(symbols: Sequence[int]) -> np.ndarray:
    """Run-length collapse: [3, 3, 5, 5, 5, 3] -> [3, 5, 3]."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.size == 0:
        return symbols
    keep = np.ones(symbols.size, dtype=bool)
    keep[1:] = symbols[1:] != symbols[:-1]
    return symbols[keep]


def speaker_vector(features: np.ndarray, world: WorldSpec) -> np.ndarray:
    """Mean residual after removing each frame's nearest phoneme embedding."""
    features = np.asarray(features, dtype=np.float32)
    if features.shape[0] == 0:
        return np.zeros(world.d_feat, dtype=np.float32)
    offset = np.zeros(world.d_feat, dtype=np.float32)
    # two refinement passes: classify, re-estimate the offset, classify again
    for _ in range(2):
        ids = nearest_code(features - offset, world.phoneme_emb)
        offset = np.mean(features - world.phoneme_emb[ids], axis=0)
    return offset


def frame_symbols(features: np.ndarray, world: WorldSpec) -> np.ndarray:
    features = np.asarray(features, dtype=np.float32)
    if features.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return nearest_code(features - speaker_vector(features, world), world.phoneme_emb)


def symbols_from_features(features: np.ndarray, world: WorldSpec) -> np.ndarray:
    return collapse(frame_symbols(features, world))


def symbols_from_tokens(tokens: np.ndarray, world: WorldSpec, tokenizer: Tokenizer) -> np.ndarray:
    """Dequantize, classify each frame by nearest phoneme after speaker removal, collapse repeats."""
    return symbols_from_features(tokens_to_features(tokens, tokenizer), world)


def edit_distance(hyp: Sequence[int], ref: Sequence[int]) -> int:
    hyp, ref = list(hyp), list(ref)
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def symbol_error_rate(hyp: Sequence[int], ref: Sequence[int]) -> float:
    """Levenshtein(hyp, ref) / max(len(ref), 1)."""
    return edit_distance(hyp, ref) / max(len(ref), 1)


def speaker_similarity(a: np.ndarray, b: np.ndarray, world: WorldSpec) -> float:
    """Cosine of the two feature streams' speaker vectors."""
    va, vb = speaker_vector(a, world), speaker_vector(b, world)
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    return float(np.dot(va, vb) / denom)
