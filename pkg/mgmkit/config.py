"""
Config Module
The run configuration: one JSON document with the sections world,
quantizers, net, pretrain, finetune, tasks, decode, paths and seed.

The dataclass field defaults below are the documented defaults table.
validate_config checks a whole document (unknown keys, types, cross-section
constraints) and reports every violation it finds; it never returns a
partially applied configuration.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union, get_args, get_origin, get_type_hints

from mgmkit.heartofitall.errors import ConfigError

logger = logging.getLogger(__name__)

COMMANDS = ("make-world", "train-codebooks", "pretrain", "finetune", "generate", "eval", "inspect-ckpt")
SEED_COMMANDS = ("make-world", "train-codebooks", "pretrain", "finetune", "generate", "eval")
FRAME_TASKS = ("vc", "se", "tse", "tse_text")
TRAINABLE_TASKS = ("tts", "vc", "se", "tse")
PROMPT_SOURCES = ("prefix", "other_utterance")


@dataclass
class WorldConfig:
    alphabet: int = 16
    speakers: int = 32
    d_feat: int = 16
    sigma: float = 0.05
    min_duration: int = 2
    max_duration: int = 4
    symbols_range: List[int] = field(default_factory=lambda: [4, 8])
    corpus_size: int = 2000
    held_out: int = 200


@dataclass
class QuantizerConfig:
    ssl_K: int = 256
    ssl_dim: int = 8
    rvq_layers: int = 4
    rvq_K: int = 64
    rvq_dim: int = 8
    commit_weight: float = 0.25
    decay: float = 0.99
    reseed_after: int = 200
    lr: float = 1e-3
    steps: int = 500
    batch_frames: int = 1024


@dataclass
class NetSection:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_len: int = 512
    rope_base: float = 10000.0


@dataclass
class PretrainSection:
    prompt_prob: float = 0.8
    prefix_range: List[float] = field(default_factory=lambda: [0.0, 0.4])
    steps: int = 20000
    acoustic_steps: int = 5000
    lr: float = 3e-4
    warmup: int = 200
    batch_tokens: int = 1024
    checkpoint_every: int = 1000


@dataclass
class FinetuneSection:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 3e-4
    warmup: int = 100
    checkpoint_every: int = 500


@dataclass
class TaskEntry:
    task: str = "tts"
    mode: str = "lora"
    lora_rank: int = 16
    lora_alpha: Optional[float] = None  # 2 * lora_rank
    condition_dim: Optional[int] = None  # world.d_feat for frame-level tasks
    weight: float = 1.0
    p_drop: float = 0.1


def default_tasks() -> List[TaskEntry]:
    return [TaskEntry("tts", weight=0.5), TaskEntry("vc", weight=0.1),
            TaskEntry("tse", weight=0.2), TaskEntry("se", weight=0.2)]


@dataclass
class DecodeSection:
    steps: int = 8
    steps_per_layer: int = 4
    temperature_init: float = 1.0
    sample_temperature: float = 1.0
    cfg_weight: float = 2.0
    n_samples: int = 20
    prompt_source: str = "other_utterance"


@dataclass
class PathsSection:
    world: str = "data/world.json"
    codebooks: str = "data/codebooks.mgmk"
    ssl_tokens: str = "data/ssl.tok"
    acoustic_tokens: str = "data/acoustic.tok"
    pretrained: str = "data/pretrained.mgmk"
    acoustic: str = "data/acoustic.mgmk"
    finetuned: str = "data/finetuned.mgmk"
    metrics_log: str = "resources/metrics.log"


@dataclass
class RunConfig:
    seed: Optional[int] = None
    world: WorldConfig = field(default_factory=WorldConfig)
    quantizers: QuantizerConfig = field(default_factory=QuantizerConfig)
    net: NetSection = field(default_factory=NetSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    tasks: List[TaskEntry] = field(default_factory=default_tasks)
    decode: DecodeSection = field(default_factory=DecodeSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULTS: Dict[str, Any] = asdict(RunConfig())


# loading and overrides

def load_config(path: Optional[Union[str, Path]]) -> dict:
    """The parsed JSON document at path; no path means an empty document (all defaults)."""
    if path is None:
        return {}
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return document


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(document: dict, overrides: Sequence[str]) -> dict:
    """
    A copy of document with dotted `key.path=value` overrides applied in order.

    List elements are addressed by index ("tasks.0.weight=0.7"). Values are
    parsed as JSON when possible and kept as strings otherwise.
    """
    doc = json.loads(json.dumps(document))
    errors = []
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            errors.append(f"override {item!r} is not of the form key.path=value")
            continue
        parts = key.split(".")
        node: Any = doc
        try:
            for p in parts[:-1]:
                if isinstance(node, list):
                    node = node[int(p)]
                else:
                    node = node.setdefault(p, {})
            last = parts[-1]
            if isinstance(node, list):
                node[int(last)] = _parse_value(raw)
            elif isinstance(node, dict):
                node[last] = _parse_value(raw)
            else:
                raise TypeError(f"{'.'.join(parts[:-1])} is not a section")
        except (ValueError, IndexError, TypeError) as exc:
            errors.append(f"override {item!r}: {exc}")
    if errors:
        raise ConfigError("; ".join(errors), errors)
    return doc


# validation

def _check_type(value: Any, hint: Any, where: str, errors: List[str]) -> Any:
    origin = get_origin(hint)
    if origin is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _check_type(value, args[0], where, errors)
    if origin in (list, tuple):
        (item,) = get_args(hint)[:1] or (Any,)
        if not isinstance(value, list):
            errors.append(f"{where}: expected a list, got {type(value).__name__}")
            return value
        return [_check_type(v, item, f"{where}[{i}]", errors) for i, v in enumerate(value)]
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif hint is str:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        errors.append(f"{where}: expected {getattr(hint, '__name__', hint)}, got {type(value).__name__} {value!r}")
    return value


def _build(cls, data: Any, where: str, errors: List[str]):
    if not isinstance(data, dict):
        errors.append(f"{where}: expected an object, got {type(data).__name__}")
        return cls()
    hints = get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    for key in sorted(set(data) - names):
        errors.append(f"{where}.{key}: unknown key" if where else f"{key}: unknown key")
    kwargs = {}
    for name in names & set(data):
        before = len(errors)
        value = _check_type(data[name], hints[name], f"{where}.{name}" if where else name, errors)
        # a mistyped field keeps its default so the cross-checks still run
        if len(errors) == before:
            kwargs[name] = value
    return cls(**kwargs)


_SECTIONS = {"world": WorldConfig, "quantizers": QuantizerConfig, "net": NetSection, "pretrain": PretrainSection,
             "finetune": FinetuneSection, "decode": DecodeSection, "paths": PathsSection}


def _positive(errors: List[str], where: str, value, allow_zero: bool = False) -> None:
    if isinstance(value, (int, float)) and (value < 0 or (value == 0 and not allow_zero)):
        errors.append(f"{where}: must be {'>= 0' if allow_zero else '> 0'}, got {value}")


def _cross_check(cfg: RunConfig, command: Optional[str], errors: List[str], check_tasks: bool = True) -> None:
    w, q, n, p, d = cfg.world, cfg.quantizers, cfg.net, cfg.pretrain, cfg.decode
    if command in SEED_COMMANDS and cfg.seed is None:
        errors.append(f"seed: required for {command}")

    for where, value in (("world.alphabet", w.alphabet), ("world.speakers", w.speakers), ("world.d_feat", w.d_feat),
                         ("world.corpus_size", w.corpus_size), ("quantizers.ssl_K", q.ssl_K),
                         ("quantizers.rvq_layers", q.rvq_layers), ("quantizers.rvq_K", q.rvq_K),
                         ("quantizers.ssl_dim", q.ssl_dim), ("quantizers.rvq_dim", q.rvq_dim),
                         ("net.d_model", n.d_model), ("net.n_layers", n.n_layers), ("net.n_heads", n.n_heads),
                         ("net.d_ff", n.d_ff), ("decode.steps", d.steps), ("decode.steps_per_layer", d.steps_per_layer)):
        _positive(errors, where, value)
    _positive(errors, "world.sigma", w.sigma, allow_zero=True)
    _positive(errors, "decode.cfg_weight", d.cfg_weight, allow_zero=True)
    if w.speakers == 1:
        errors.append("world.speakers: at least 2 speakers are needed for conversion and extraction tasks")
    if not 1 <= w.min_duration <= w.max_duration:
        errors.append(f"world: duration range [{w.min_duration}, {w.max_duration}] is empty")
    if len(w.symbols_range) != 2 or not 1 <= w.symbols_range[0] <= w.symbols_range[-1]:
        errors.append(f"world.symbols_range: expected [lo, hi] with 1 <= lo <= hi, got {w.symbols_range}")
    if not 0 <= w.held_out < w.corpus_size:
        errors.append(f"world.held_out: {w.held_out} must be in [0, corpus_size={w.corpus_size})")
    if n.n_heads > 0 and n.d_model % n.n_heads:
        errors.append(f"net.d_model ({n.d_model}) must be divisible by net.n_heads ({n.n_heads})")
    elif n.n_heads > 0 and (n.d_model // n.n_heads) % 2:
        errors.append(f"net: head size {n.d_model // n.n_heads} must be even for rotary embeddings")
    if len(w.symbols_range) == 2:
        # prompt utterance + target utterance, plus a symbol prefix covering both
        longest = 2 * w.symbols_range[1] * (w.max_duration + 1)
        if longest > n.max_len:
            errors.append(f"net.max_len ({n.max_len}) is shorter than the longest sequence ({longest})")
    if len(p.prefix_range) != 2 or not 0.0 <= p.prefix_range[0] <= p.prefix_range[-1] <= 1.0:
        errors.append(f"pretrain.prefix_range: expected [lo, hi] within [0, 1], got {p.prefix_range}")
    if not 0.0 <= p.prompt_prob <= 1.0:
        errors.append(f"pretrain.prompt_prob: {p.prompt_prob} outside [0, 1]")
    if d.prompt_source not in PROMPT_SOURCES:
        errors.append(f"decode.prompt_source: {d.prompt_source!r} not one of {list(PROMPT_SOURCES)}")

    if not check_tasks:
        return
    if command == "finetune" and not cfg.tasks:
        errors.append("tasks: no tasks")
    seen = set()
    for i, t in enumerate(cfg.tasks):
        where = f"tasks[{i}]"
        if t.task not in TRAINABLE_TASKS:
            errors.append(f"{where}.task: {t.task!r} is not a trainable task {list(TRAINABLE_TASKS)}")
        if t.task in seen:
            errors.append(f"{where}.task: {t.task!r} listed twice")
        seen.add(t.task)
        if t.mode not in ("lora", "full"):
            errors.append(f"{where}.mode: {t.mode!r} not one of ['lora', 'full']")
        _positive(errors, f"{where}.lora_rank", t.lora_rank)
        _positive(errors, f"{where}.weight", t.weight, allow_zero=True)
        if not 0.0 <= t.p_drop <= 1.0:
            errors.append(f"{where}.p_drop: {t.p_drop} outside [0, 1]")
        if t.task in FRAME_TASKS and t.condition_dim is not None and t.condition_dim != w.d_feat:
            errors.append(f"{where}.condition_dim: {t.condition_dim} does not match world.d_feat ({w.d_feat})")
        if t.task == "tts" and t.condition_dim not in (None, 0):
            errors.append(f"{where}.condition_dim: tts takes no frame-level condition")
    if cfg.tasks:
        total = sum(t.weight for t in cfg.tasks)
        if abs(total - 1.0) > 1e-9:
            errors.append(f"tasks: proportions sum to {total:.6g}, expected 1")
    if len({t.mode for t in cfg.tasks}) > 1:
        errors.append("tasks: every task must use the same fine-tuning mode")


def validate_config(document: Any, command: Optional[str] = None) -> Tuple[Optional[RunConfig], List[str]]:
    """
    Normalize a parsed config document.

    Args:
        document: the parsed JSON (after overrides)
        command: the CLI command it is for; enables command-specific checks

    Returns:
        (RunConfig, []) when valid, otherwise (None, every violation found)
    """
    errors: List[str] = []
    if command is not None and command not in COMMANDS:
        errors.append(f"unknown command {command!r}")
    if not isinstance(document, dict):
        return None, errors + [f"config must be a JSON object, got {type(document).__name__}"]
    allowed = set(_SECTIONS) | {"seed", "tasks"}
    for key in sorted(set(document) - allowed):
        errors.append(f"{key}: unknown key")

    sections = {name: _build(cls, document.get(name, {}), name, errors) for name, cls in _SECTIONS.items()}
    seed = document.get("seed")
    if seed is not None:
        seed = _check_type(seed, int, "seed", errors)
    tasks_doc = document.get("tasks")
    before_tasks = len(errors)
    if tasks_doc is None:
        tasks = default_tasks()
    elif not isinstance(tasks_doc, list):
        errors.append(f"tasks: expected a list, got {type(tasks_doc).__name__}")
        tasks = []
    else:
        tasks = []
        for i, entry in enumerate(tasks_doc):
            if isinstance(entry, dict) and "task" not in entry:
                errors.append(f"tasks[{i}].task: required")
            tasks.append(_build(TaskEntry, entry, f"tasks[{i}]", errors))
    tasks_parsed = len(errors) == before_tasks

    cfg = RunConfig(seed=seed, tasks=tasks, **sections)
    _cross_check(cfg, command, errors, check_tasks=tasks_parsed)
    if errors:
        return None, errors
    return cfg, []


def require_valid(document: Any, command: Optional[str] = None) -> RunConfig:
    cfg, errors = validate_config(document, command)
    if cfg is None:
        raise ConfigError(f"{len(errors)} config error(s): " + "; ".join(errors), errors)
    return cfg
