"""
Finetune Module
Task fine-tuning on top of a pre-trained net, single-task or mixed by proportions.

A step drops the condition with probability p_drop (training the guidance
null branch), keeps the sample's prompt unmasked, masks the rest as in
pre-training, and updates only the trainable set: the LoRA overlay and the
condition modules, plus the base weights in full mode.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from mgmkit.adaptation.conditioning import TaskConditioner, condition_dropout
from mgmkit.heartofitall.conditions import ConditionKind, TaskCondition
from mgmkit.heartofitall.errors import ArgumentError
from mgmkit.net.train import Example, train_step
from mgmkit.net.transformer import ModelParams
from mgmkit.numerics.optim import AdamW
from mgmkit.numerics.rng import RngStream
from mgmkit.toyworld.tasks import TASK_BUILDERS, TASK_KINDS, TaskSample
from mgmkit.training.pretrain import PretrainConfig, draw_training_mask, make_example

logger = logging.getLogger(__name__)

MODES = ("lora", "full")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    kind: ConditionKind
    builder: str  # key into toyworld TASK_BUILDERS
    p_drop: float = 0.1
    weight: float = 1.0
    prompt_prob: float = 0.8
    prefix_range: Tuple[float, float] = (0.0, 0.4)

    def __post_init__(self) -> None:
        if self.builder not in TASK_BUILDERS:
            raise ArgumentError(f"unknown condition builder {self.builder!r}")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ArgumentError(f"p_drop {self.p_drop} outside [0, 1]")
        if self.weight < 0:
            raise ArgumentError(f"task weight must be >= 0, got {self.weight}")

    @classmethod
    def for_task(cls, task_id: str, **kw) -> "TaskSpec":
        if task_id not in TASK_KINDS:
            raise ArgumentError(f"unknown task {task_id!r}; known: {sorted(TASK_KINDS)}")
        return cls(task_id, TASK_KINDS[task_id], task_id, **kw)

    def pretrain_view(self) -> PretrainConfig:
        # the per-task prompt policy, expressed as the pre-training one
        return PretrainConfig(prompt_prob=self.prompt_prob, prefix_range=self.prefix_range)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


def _check_kind(condition: TaskCondition, task: TaskSpec) -> None:
    if condition.kind is not task.kind:
        raise ArgumentError(f"task {task.task_id} expects a {task.kind.value} condition, got {condition.kind.value}")


def finetune_step(params: ModelParams, batch: Sequence[TaskSample], task: TaskSpec, rng: RngStream,
                  optimizer: AdamW, conditioner: TaskConditioner, overlay=None, mode: str = "lora") -> float:
    """
    One fine-tuning step on samples of a single task.

    Args:
        params: base weights; only updated in "full" mode
        batch: samples built for `task`
        task: the task being trained
        rng: drives condition dropout and masking
        optimizer: holds state for every trainable name
        conditioner: the task's condition modules (always trained)
        overlay: LoRA overlay (trained in "lora" mode)
        mode: "lora" freezes the base, "full" trains it too

    Returns:
        the loss before the update
    """
    if mode not in MODES:
        raise ArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    if not batch:
        raise ArgumentError("finetune_step needs at least one sample")
    mask_id = params.config.mask_id
    policy = task.pretrain_view()
    examples: List[Example] = []
    for sample in batch:
        _check_kind(sample.condition, task)
        cond = condition_dropout(sample.condition, task.p_drop, rng)
        drawn = draw_training_mask(len(sample.target), policy, rng, prompt_len=sample.prompt_len)
        examples.append(make_example(sample.target, drawn, mask_id, None if cond.is_none else cond))
    return train_step(params, examples, optimizer, overlay=overlay if mode == "lora" else None,
                      conditioner=conditioner, train_base=mode == "full")


def multitask_draw(specs: Sequence[TaskSpec], rng: RngStream) -> str:
    """Categorical draw of a task id by weight."""
    if not specs:
        raise ArgumentError("no tasks to draw from")
    weights = np.array([s.weight for s in specs], dtype=np.float64)
    total = float(weights.sum())
    if abs(total - 1.0) > 1e-9:
        raise ArgumentError(f"task weights must sum to 1, got {total}")
    cdf = np.cumsum(weights)
    idx = int(np.searchsorted(cdf, rng.uniform() * cdf[-1], side="right"))
    return specs[min(idx, len(specs) - 1)].task_id


def spec_by_id(specs: Sequence[TaskSpec], task_id: str) -> TaskSpec:
    for s in specs:
        if s.task_id == task_id:
            return s
    raise ArgumentError(f"no task {task_id!r} among {[s.task_id for s in specs]}")


def new_conditioner(specs: Sequence[TaskSpec], d_model: int, n_symbols: int, d_c: int,
                    rng: RngStream) -> TaskConditioner:
    """Condition modules covering every channel the given tasks use."""
    symbols = any(s.kind in (ConditionKind.NON_FRAME_LEVEL, ConditionKind.COMPOSITE) for s in specs)
    frames = any(s.kind in (ConditionKind.FRAME_LEVEL, ConditionKind.COMPOSITE) for s in specs)
    return TaskConditioner.create(d_model, rng, n_symbols if symbols else 0, d_c if frames else 0)
