# data_loader.py
"""
Data Loader Module
Reads and writes the on-disk pieces of a run: the world description, token
streams with their JSON sidecars, and the synthetic corpus.

A token-stream file holds little-endian uint32 ids, every utterance's
[L x n] block flattened row by row one after another. The sidecar next to it
(same stem, .json) records where each utterance starts and how long it is,
together with its symbols, speaker and corpus index for oracle evaluation.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from mgmkit.heartofitall.errors import ArgumentError, ConfigError, ShapeError
from mgmkit.heartofitall.tokens import STREAM_DTYPE, TOKEN_DTYPE
from mgmkit.numerics.rng import RngStream, rng_fork
from mgmkit.toyworld.world import Utterance, WorldSpec, gen_utterance

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _as_path(p: PathLike) -> Path:
    return p if isinstance(p, Path) else Path(p)


def sidecar_path(stream_path: PathLike) -> Path:
    return _as_path(stream_path).with_suffix(".json")


# world

def save_world(path: PathLike, world: WorldSpec) -> None:
    path = _as_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(world.settings(), indent=2, sort_keys=True), encoding="utf-8")
    logger.info("wrote world %s (seed %d, %d symbols, %d speakers)", path, world.seed, world.alphabet, world.speakers)


def load_world(path: PathLike) -> WorldSpec:
    """The tables are regenerated from the stored seed."""
    path = _as_path(path)
    try:
        settings = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no world file; run make-world first") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: unreadable world file ({exc})") from exc
    return WorldSpec(**settings)


# corpus

@dataclass(eq=False)
class Corpus:
    world: WorldSpec
    seed: int
    utterances: List[Utterance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.utterances)

    def frames(self) -> np.ndarray:
        return np.concatenate([u.features for u in self.utterances], axis=0)

    def by_speaker(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {}
        for i, u in enumerate(self.utterances):
            out.setdefault(u.speaker, []).append(i)
        return out

    def split(self, held_out: int) -> Tuple["Corpus", "Corpus"]:
        """(training part, the last `held_out` utterances)."""
        if not 0 <= held_out <= len(self):
            raise ArgumentError(f"cannot hold out {held_out} of {len(self)} utterances")
        cut = len(self) - held_out
        return (Corpus(self.world, self.seed, self.utterances[:cut]),
                Corpus(self.world, self.seed, self.utterances[cut:]))


def corpus_utterance(world: WorldSpec, seed: int, index: int, symbols_range: Tuple[int, int]) -> Utterance:
    """Utterance `index` of the corpus drawn from `seed`; independent of every other index."""
    rng = rng_fork(RngStream(seed), f"utterance/{index}")
    lo, hi = symbols_range
    return gen_utterance(world, int(rng.integers(lo, hi + 1)), rng)


def make_corpus(world: WorldSpec, size: int, seed: int, symbols_range: Tuple[int, int] = (4, 8)) -> Corpus:
    if size < 1:
        raise ArgumentError(f"corpus size must be >= 1, got {size}")
    utterances = [corpus_utterance(world, seed, i, symbols_range) for i in range(size)]
    logger.info("generated %d utterances (%d frames)", size, sum(u.n for u in utterances))
    return Corpus(world, seed, utterances)


# token streams

def save_token_streams(path: PathLike, streams: Sequence[np.ndarray],
                       utterances: Optional[Sequence[Utterance]] = None,
                       meta: Optional[Dict[str, Any]] = None) -> int:
    """
    Write [n] or [L x n] token blocks plus their sidecar.

    Args:
        path: the .tok file; the sidecar goes next to it
        streams: one block per utterance, all with the same layer count
        utterances: the clean utterances the blocks came from, for the sidecar
        meta: extra JSON-able fields for the sidecar

    Returns:
        number of ids written
    """
    path = _as_path(path)
    blocks = [np.atleast_2d(np.asarray(s)) for s in streams]
    if not blocks:
        raise ArgumentError("no token streams to write")
    n_layers = blocks[0].shape[0]
    if any(b.shape[0] != n_layers for b in blocks):
        raise ShapeError(f"every block needs {n_layers} layers, got {[b.shape[0] for b in blocks]}")
    if any((b < 0).any() or (b > np.iinfo(STREAM_DTYPE).max).any() for b in blocks):
        raise ArgumentError("token ids must fit in an unsigned 32-bit integer")
    entries, offset = [], 0
    for i, b in enumerate(blocks):
        entry = {"offset": offset, "length": int(b.shape[1])}
        if utterances is not None:
            u = utterances[i]
            entry.update(symbols=u.symbols.tolist(), durations=u.durations.tolist(), speaker=int(u.speaker))
        entries.append(entry)
        offset += b.size
    path.parent.mkdir(parents=True, exist_ok=True)
    np.concatenate([b.ravel() for b in blocks]).astype(STREAM_DTYPE).tofile(path)
    sidecar = dict(meta or {})
    sidecar.update(n_layers=n_layers, utterances=entries)
    sidecar_path(path).write_text(json.dumps(sidecar, indent=1), encoding="utf-8")
    logger.info("wrote %d token blocks (%d ids) to %s", len(blocks), offset, path)
    return offset


def load_token_streams(path: PathLike) -> Tuple[List[np.ndarray], Dict[str, Any]]:
    """([L x n] blocks, sidecar); single-layer files still come back as [1 x n]."""
    path = _as_path(path)
    try:
        sidecar = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        flat = np.fromfile(path, dtype=STREAM_DTYPE)
    except FileNotFoundError as exc:
        raise ConfigError(f"{exc.filename}: missing token stream; run train-codebooks first") from exc
    L = int(sidecar["n_layers"])
    blocks = []
    for entry in sidecar["utterances"]:
        start, n = int(entry["offset"]), int(entry["length"])
        if start + L * n > flat.size:
            raise ShapeError(f"{path}: block at {start} runs past the end of the stream ({flat.size} ids)")
        blocks.append(flat[start:start + L * n].reshape(L, n).astype(TOKEN_DTYPE))
    return blocks, sidecar
