"""
Loop Module
Step loops for pre-training and (multi-task) fine-tuning with the metrics
log, periodic checkpoints and exact resume.

Every random draw of a run comes from the trainer's single RngStream, so
saving (params, optimizer, rng, step) and restoring them continues the run
bit for bit.
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from mgmkit.adaptation.conditioning import TaskConditioner
from mgmkit.adaptation.lora import LoraOverlay
from mgmkit.heartofitall.errors import ArgumentError, CheckpointFormatError
from mgmkit.net.transformer import ModelParams, NetConfig
from mgmkit.numerics.optim import AdamW, AdamWConfig
from mgmkit.numerics.rng import RngStream
from mgmkit.quantizers.codec import CodecConfig, FeatureCodec
from mgmkit.toyworld.tasks import TaskSample
from mgmkit.training.checkpoint import Checkpoint, assemble, checkpoint_save
from mgmkit.training.finetune import TaskSpec, finetune_step, multitask_draw, spec_by_id
from mgmkit.training.pretrain import PretrainConfig, pretrain_step

logger = logging.getLogger(__name__)
metrics = logging.getLogger("mgmkit.metrics")

# sampler(task_id, rng) -> TaskSample
TaskSampler = Callable[[str, RngStream], TaskSample]

# checkpoint sections the trainer writes itself; anything else is carried in `extra`
_OWN_SECTIONS = ("params", "codebook", "overlay", "optim")


def log_metrics(step: int, loss: float, task: str) -> None:
    metrics.info("step %d loss %.6f task %s", step, loss, task)


def progress(iterable, total: int, desc: str, quiet: bool = False):
    return tqdm(iterable, total=total, desc=desc, disable=quiet or not sys.stderr.isatty(), leave=False)


def batch_by_tokens(corpus: Sequence[np.ndarray], batch_tokens: int, rng: RngStream) -> List[np.ndarray]:
    """Random sequences until the token budget is reached (at least one)."""
    batch, used = [], 0
    while not batch or used < batch_tokens:
        seq = corpus[int(rng.integers(0, len(corpus)))]
        batch.append(seq)
        used += len(seq)
    return batch


class Trainer:
    def __init__(self, params: ModelParams, optimizer: AdamW, rng: RngStream, step: int = 0,
                 checkpoint_path: Optional[Path] = None, checkpoint_every: int = 0,
                 configs: Optional[Mapping] = None, quiet: bool = False) -> None:
        self.params = params
        self.optimizer = optimizer
        self.rng = rng
        self.step = step
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.checkpoint_every = checkpoint_every
        self.configs = dict(configs or {})
        self.quiet = quiet
        self.losses: List[float] = []
        # carried into every checkpoint this trainer writes
        self.codecs: Dict[str, FeatureCodec] = {}
        self.overlays: Dict[str, Dict[str, np.ndarray]] = {}
        self.overlay_meta: Dict[str, dict] = {}
        self.extra: Dict[str, np.ndarray] = {}

    # persistence
    def snapshot(self) -> Checkpoint:
        ckpt = assemble(self.params, self.codecs, self.overlays, self.optimizer, self.rng, self.configs, self.step,
                        self.extra)
        if self.overlay_meta:
            ckpt.metadata["overlays"] = dict(self.overlay_meta)
        return ckpt

    def save(self, path: Optional[Path] = None) -> int:
        path = path or self.checkpoint_path
        if path is None:
            raise ArgumentError("no checkpoint path configured")
        return checkpoint_save(path, self.snapshot())

    def _maybe_checkpoint(self) -> None:
        if self.checkpoint_path and self.checkpoint_every and self.step % self.checkpoint_every == 0:
            self.save()

    @classmethod
    def resume(cls, ckpt: Checkpoint, **kwargs) -> "Trainer":
        params = restore_params(ckpt)
        optimizer = restore_optimizer(ckpt, kwargs.pop("optimizer_config", None))
        if "rng" not in ckpt.metadata:
            raise CheckpointFormatError("checkpoint carries no rng state, cannot resume")
        trainer = cls(params, optimizer, RngStream.from_state(ckpt.metadata["rng"]), ckpt.step,
                      configs=ckpt.metadata.get("configs"), **kwargs)
        trainer.codecs = restore_codecs(ckpt)
        trainer.overlays = {t: ckpt.group(f"overlay/{t}") for t in ckpt.overlay_tasks()}
        trainer.overlay_meta = dict(ckpt.metadata.get("overlays", {}))
        trainer.extra = {k: v for k, v in ckpt.arrays.items() if k.split("/")[0] not in _OWN_SECTIONS}
        logger.info("resumed at step %d", trainer.step)
        return trainer

    def attach_task(self, task: str, conditioner: TaskConditioner, overlay: Optional[LoraOverlay] = None) -> None:
        """Register a task's trainable modules so checkpoints see their in-place updates."""
        arrays = dict(conditioner.arrays())
        meta = {"mode": "full"}
        if overlay is not None:
            arrays.update(overlay.arrays())
            meta = {"mode": "lora", "rank": overlay.rank, "alpha": overlay.alpha}
        self.overlays[task] = arrays
        self.overlay_meta[task] = meta

    # loops
    def run(self, steps: int, desc: str, step_fn: Callable[[], Tuple[float, str]]) -> List[float]:
        """Call step_fn `steps` times; it performs one update and returns (loss, task id)."""
        for _ in progress(range(steps), steps, desc, self.quiet):
            loss, task = step_fn()
            self.step += 1
            self.losses.append(loss)
            log_metrics(self.step, loss, task)
            self._maybe_checkpoint()
        return self.losses

    def pretrain(self, corpus: Sequence[np.ndarray], cfg: PretrainConfig, steps: int) -> List[float]:
        if not corpus:
            raise ArgumentError("empty pre-training corpus")
        logger.info("pre-training for %d steps from step %d", steps, self.step)

        def one_step():
            batch = batch_by_tokens(corpus, cfg.batch_tokens, self.rng)
            return pretrain_step(self.params, batch, cfg, self.rng, self.optimizer), "pretrain"

        return self.run(steps, "pretrain", one_step)

    def finetune(self, sampler: TaskSampler, specs: Sequence[TaskSpec], steps: int, batch_size: int,
                 conditioners: Mapping[str, TaskConditioner], overlays: Optional[Mapping[str, LoraOverlay]] = None,
                 mode: str = "lora") -> List[float]:
        """
        Fine-tune on one or more tasks; each step draws its task by weight.

        Args:
            sampler: builds a fresh sample of a task from the trainer's rng
            specs: active tasks with proportions summing to 1
            steps: number of optimizer steps
            batch_size: samples per step
            conditioners: task id -> condition modules (may be shared between tasks)
            overlays: task id -> LoRA overlay, required in lora mode
            mode: "lora" or "full"

        Returns:
            every loss this trainer has recorded
        """
        overlays = overlays or {}
        logger.info("fine-tuning %s (%s) for %d steps", [s.task_id for s in specs], mode, steps)

        def one_step():
            task_id = multitask_draw(specs, self.rng) if len(specs) > 1 else specs[0].task_id
            spec = spec_by_id(specs, task_id)
            batch = [sampler(task_id, self.rng) for _ in range(batch_size)]
            loss = finetune_step(self.params, batch, spec, self.rng, self.optimizer, conditioners[task_id],
                                 overlays.get(task_id), mode)
            return loss, task_id

        return self.run(steps, "finetune", one_step)


# restoring pieces of a checkpoint

def restore_params(ckpt: Checkpoint) -> ModelParams:
    if "net" not in ckpt.metadata or not ckpt.has_group("params"):
        raise CheckpointFormatError("checkpoint holds no network parameters")
    return ModelParams(NetConfig(**ckpt.metadata["net"]), {k: np.array(v) for k, v in ckpt.group("params").items()})


def restore_optimizer(ckpt: Checkpoint, config: Optional[AdamWConfig] = None) -> AdamW:
    optimizer = AdamW(config)
    optimizer.load_state(ckpt.metadata.get("optim_t", 0), ckpt.group("optim"))
    return optimizer


def restore_codecs(ckpt: Checkpoint) -> Dict[str, FeatureCodec]:
    out = {}
    for name, cfg in ckpt.metadata.get("codecs", {}).items():
        out[name] = FeatureCodec.from_arrays(CodecConfig(**cfg), ckpt.group(f"codebook/{name}"))
    return out


def restore_overlay(ckpt: Checkpoint, task: str):
    """(LoraOverlay or None, TaskConditioner) stored for a task."""
    arrays = ckpt.group(f"overlay/{task}")
    if not arrays:
        raise CheckpointFormatError(f"checkpoint has no overlay for task {task!r}")
    meta = ckpt.metadata.get("overlays", {}).get(task, {})
    lora = {k: v for k, v in arrays.items() if k.startswith("lora/")}
    overlay = LoraOverlay.from_arrays(meta.get("rank", 1), meta.get("alpha", 2.0), lora) if lora else None
    return overlay, TaskConditioner.from_arrays(arrays)
