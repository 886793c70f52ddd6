"""
Command-line entry point.

    python -m mgmkit.main make-world      --set seed=0
    python -m mgmkit.main train-codebooks --set seed=0
    python -m mgmkit.main pretrain        --set seed=0 [--stage acoustic] [--resume]
    python -m mgmkit.main finetune        --set seed=0 [--resume]
    python -m mgmkit.main generate        --set seed=0 --task tts [--two-stage]
    python -m mgmkit.main eval            --set seed=0 [--tasks tts se] [--plot bars.png]
    python -m mgmkit.main inspect-ckpt    data/pretrained.mgmk

Human logs go to stderr; eval and inspect-ckpt write JSON to stdout.
Exit codes: 0 ok, 1 runtime failure, 2 bad arguments, 3 invalid config,
4 checkpoint error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from mgmkit.acoustic.stage import AcousticBatch, AcousticConditioner, acoustic_generate, acoustic_train_step
from mgmkit.adaptation.lora import lora_attach
from mgmkit.config import RunConfig, apply_overrides, load_config, require_valid
from mgmkit.heartofitall.errors import ArgumentError, CheckpointError, ConfigError
from mgmkit.heartofitall.tokens import DecodeConfig
from mgmkit.net.predictor import NetPredictor
from mgmkit.net.transformer import NetConfig, build
from mgmkit.numerics.optim import AdamW, AdamWConfig
from mgmkit.numerics.rng import RngStream, rng_fork
from mgmkit.quantizers.codec import CodecConfig, FeatureCodec
from mgmkit.toyworld.readout import symbol_error_rate, symbols_from_features, tokens_to_features
from mgmkit.toyworld.tasks import PROMPT_TASKS, PromptPolicy, draw_task_sample
from mgmkit.toyworld.world import make_world
from mgmkit.training.checkpoint import VERSION, MAGIC, Checkpoint, assemble, checkpoint_load, checkpoint_save
from mgmkit.training.finetune import TaskSpec, new_conditioner
from mgmkit.training.loop import (Trainer, progress, restore_codecs, restore_overlay, restore_params)
from mgmkit.training.pretrain import PretrainConfig
from mgmkit.algorithms.iterative import iterative_decode
from mgmkit.utilities.data_loader import (load_token_streams, load_world, make_corpus, save_token_streams,
                                          save_world)
from mgmkit.utilities.logging_setup import configure_logging, metrics_to_file
from mgmkit.utilities.task_runner import AcousticModel, TaskModel, TaskRunner, normalize_task_name
from mgmkit.utilities.visualizer import plot_loss_curve, plot_task_metrics

logger = logging.getLogger("mgmkit.main")

EXIT_OK, EXIT_RUNTIME, EXIT_ARGS, EXIT_CONFIG, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


# shared helpers

def _seed_rng(cfg: RunConfig, label: str) -> RngStream:
    return rng_fork(RngStream(cfg.seed), label)


def _net_config(cfg: RunConfig, vocab_size: int) -> NetConfig:
    n = cfg.net
    return NetConfig(d_model=n.d_model, n_layers=n.n_layers, n_heads=n.n_heads, d_ff=n.d_ff,
                     vocab_size=vocab_size, max_len=n.max_len, rope_base=n.rope_base)


def _codec_config(cfg: RunConfig, acoustic: bool) -> CodecConfig:
    q = cfg.quantizers
    if acoustic:
        return CodecConfig(cfg.world.d_feat, q.rvq_dim, q.rvq_layers, q.rvq_K, q.decay, q.commit_weight,
                           q.reseed_after, q.lr)
    return CodecConfig(cfg.world.d_feat, q.ssl_dim, 1, q.ssl_K, q.decay, q.commit_weight, q.reseed_after, q.lr)


def _decode_config(cfg: RunConfig, rng: Optional[RngStream] = None, cfg_weight: Optional[float] = None) -> DecodeConfig:
    d = cfg.decode
    return DecodeConfig(steps=d.steps, temperature_init=d.temperature_init,
                        cfg_weight=d.cfg_weight if cfg_weight is None else cfg_weight,
                        sample_temperature=d.sample_temperature, rng=rng)


def _policy(cfg: RunConfig) -> PromptPolicy:
    return PromptPolicy(cfg.pretrain.prompt_prob, tuple(cfg.pretrain.prefix_range))


def _training_blocks(cfg: RunConfig, path: str) -> List[np.ndarray]:
    blocks, sidecar = load_token_streams(path)
    held_out = int(sidecar.get("held_out", 0))
    return blocks[:len(blocks) - held_out]


def _trainer(resume_path: Path, resume: bool, fresh: Callable[[], Trainer], optimizer_config: AdamWConfig,
             checkpoint_every: int, quiet: bool) -> Trainer:
    if resume and resume_path.exists():
        trainer = Trainer.resume(checkpoint_load(resume_path), optimizer_config=optimizer_config,
                                 checkpoint_path=resume_path,
                                 checkpoint_every=checkpoint_every, quiet=quiet)
        return trainer
    trainer = fresh()
    trainer.checkpoint_path = resume_path
    trainer.checkpoint_every = checkpoint_every
    trainer.quiet = quiet
    return trainer


def load_task_models(ckpt: Checkpoint) -> Dict[str, TaskModel]:
    """task id -> TaskModel for every overlay stored in a fine-tuned checkpoint."""
    params = restore_params(ckpt)
    models: Dict[str, TaskModel] = {}
    for name in ckpt.overlay_tasks():
        overlay, conditioner = restore_overlay(ckpt, name)
        tasks = list(ckpt.metadata.get("overlays", {}).get(name, {}).get("tasks", [name]))
        # text-guided extraction reuses the symbol table and the frame adapter
        if "tse" in tasks and conditioner.text_emb is not None and conditioner.adapter is not None:
            tasks.append("tse_text")
        for task in tasks:
            models[task] = TaskModel(params, conditioner, overlay)
    if not models:
        raise ArgumentError("checkpoint holds no task overlays; run finetune first")
    return models


def load_acoustic_model(cfg: RunConfig) -> AcousticModel:
    ckpt = checkpoint_load(cfg.paths.acoustic)
    codecs = restore_codecs(ckpt)
    if "acoustic" not in codecs:
        raise ArgumentError(f"{cfg.paths.acoustic} carries no acoustic codec")
    conditioner = AcousticConditioner.from_arrays({k: v for k, v in ckpt.arrays.items() if k.startswith("acoustic/")})
    return AcousticModel(restore_params(ckpt), conditioner, codecs["acoustic"], cfg.decode.steps_per_layer)


def _ssl_codec(ckpt: Checkpoint) -> FeatureCodec:
    codecs = restore_codecs(ckpt)
    if "ssl" not in codecs:
        raise ArgumentError("checkpoint carries no SSL tokenizer")
    return codecs["ssl"]


# commands

def cmd_make_world(cfg: RunConfig, args: argparse.Namespace) -> int:
    w = cfg.world
    world = make_world(cfg.seed, alphabet=w.alphabet, speakers=w.speakers, d_feat=w.d_feat, sigma=w.sigma,
                       min_duration=w.min_duration, max_duration=w.max_duration)
    save_world(cfg.paths.world, world)
    return EXIT_OK


def train_codec(codec: FeatureCodec, frames: np.ndarray, steps: int, batch_frames: int, rng: RngStream,
                desc: str, quiet: bool = False) -> FeatureCodec:
    codec.seed_codes(frames, rng)
    for _ in progress(range(steps), steps, desc, quiet):
        picks = rng.integers(0, frames.shape[0], size=min(batch_frames, frames.shape[0]))
        codec.train_step(frames[picks], rng)
    return codec


def cmd_train_codebooks(cfg: RunConfig, args: argparse.Namespace) -> int:
    world = load_world(cfg.paths.world)
    w, q = cfg.world, cfg.quantizers
    corpus = make_corpus(world, w.corpus_size, cfg.seed, tuple(w.symbols_range))
    train_part, _ = corpus.split(w.held_out)
    logger.info("corpus: %d utterances from %d speakers, %d held out", len(corpus), len(corpus.by_speaker()),
                w.held_out)
    frames = train_part.frames()
    rng = _seed_rng(cfg, "codebooks")

    ssl = train_codec(FeatureCodec.create(_codec_config(cfg, False), rng), frames, q.steps, q.batch_frames, rng,
                      "ssl codebook", args.quiet)
    acoustic = train_codec(FeatureCodec.create(_codec_config(cfg, True), rng), frames, q.steps, q.batch_frames, rng,
                           "acoustic codebooks", args.quiet)
    logger.info("ssl tokenizer feature error %.5f", ssl.feature_error(frames))
    for depth in range(1, acoustic.n_layers + 1):
        logger.info("acoustic codec feature error with %d layer(s): %.5f", depth, acoustic.feature_error(frames, depth))

    meta = {"world_seed": world.seed, "corpus_seed": cfg.seed, "held_out": w.held_out}
    utts = corpus.utterances
    save_token_streams(cfg.paths.ssl_tokens, [ssl.encode(u.features) for u in utts], utts, meta)
    save_token_streams(cfg.paths.acoustic_tokens, [acoustic.encode(u.features) for u in utts], utts, meta)
    checkpoint_save(cfg.paths.codebooks, assemble(codecs={"ssl": ssl, "acoustic": acoustic},
                                                  configs=cfg.to_dict(), rng=rng))
    return EXIT_OK


def _pretrain_ssl(cfg: RunConfig, args: argparse.Namespace) -> int:
    p = cfg.pretrain
    path = Path(cfg.paths.pretrained)
    optim = AdamWConfig(lr=p.lr, warmup=p.warmup)
    corpus = [b[0] for b in _training_blocks(cfg, cfg.paths.ssl_tokens)]

    def fresh() -> Trainer:
        params = build(_net_config(cfg, cfg.quantizers.ssl_K), _seed_rng(cfg, "init/ssl"))
        trainer = Trainer(params, AdamW(optim), _seed_rng(cfg, "pretrain/ssl"),
                          configs=cfg.to_dict())
        trainer.codecs = restore_codecs(checkpoint_load(cfg.paths.codebooks))
        return trainer

    trainer = _trainer(path, args.resume, fresh, optim, p.checkpoint_every, args.quiet)
    pcfg = PretrainConfig(prompt_prob=p.prompt_prob, prefix_range=tuple(p.prefix_range), steps=p.steps, lr=p.lr,
                          warmup=p.warmup, batch_tokens=p.batch_tokens, seed=cfg.seed)
    with metrics_to_file(cfg.paths.metrics_log):
        trainer.pretrain(corpus, pcfg, max(0, p.steps - trainer.step))
    trainer.save()
    return EXIT_OK


def _pretrain_acoustic(cfg: RunConfig, args: argparse.Namespace) -> int:
    p, q = cfg.pretrain, cfg.quantizers
    path = Path(cfg.paths.acoustic)
    optim = AdamWConfig(lr=p.lr, warmup=p.warmup)
    ssl_blocks = _training_blocks(cfg, cfg.paths.ssl_tokens)
    acoustic_blocks = _training_blocks(cfg, cfg.paths.acoustic_tokens)
    corpus = [AcousticBatch(s[0], a) for s, a in zip(ssl_blocks, acoustic_blocks)]
    if not corpus:
        raise ArgumentError("empty acoustic training corpus")

    def fresh() -> Trainer:
        params = build(_net_config(cfg, q.rvq_K), _seed_rng(cfg, "init/acoustic"))
        trainer = Trainer(params, AdamW(optim), _seed_rng(cfg, "pretrain/acoustic"),
                          configs=cfg.to_dict())
        trainer.codecs = restore_codecs(checkpoint_load(cfg.paths.codebooks))
        conditioner = AcousticConditioner.create(q.ssl_K, q.rvq_layers, q.rvq_K, cfg.net.d_model,
                                                 _seed_rng(cfg, "init/acoustic-conditioner"))
        trainer.extra = conditioner.arrays()
        return trainer

    trainer = _trainer(path, args.resume, fresh, optim, p.checkpoint_every, args.quiet)
    conditioner = AcousticConditioner.from_arrays(trainer.extra)
    trainer.extra = conditioner.arrays()
    policy = _policy(cfg)
    lengths = [b.n for b in corpus]

    def one_step():
        batch, used = [], 0
        while not batch or used < p.batch_tokens:
            b = corpus[int(trainer.rng.integers(0, len(corpus)))]
            batch.append(dataclasses.replace(b, prompt_len=policy.draw(b.n, trainer.rng)))
            used += b.n
        return acoustic_train_step(trainer.params, batch, trainer.rng, trainer.optimizer, conditioner), "acoustic"

    logger.info("acoustic pre-training on %d sequences (%d frames)", len(corpus), sum(lengths))
    with metrics_to_file(cfg.paths.metrics_log):
        trainer.run(max(0, p.acoustic_steps - trainer.step), "acoustic", one_step)
    trainer.save()
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.stage == "acoustic":
        return _pretrain_acoustic(cfg, args)
    return _pretrain_ssl(cfg, args)


def cmd_finetune(cfg: RunConfig, args: argparse.Namespace) -> int:
    f, p = cfg.finetune, cfg.pretrain
    world = load_world(cfg.paths.world)
    base = checkpoint_load(cfg.paths.pretrained)
    codec = _ssl_codec(base)
    path = Path(cfg.paths.finetuned)
    optim = AdamWConfig(lr=f.lr, warmup=f.warmup)
    specs = [TaskSpec.for_task(t.task, p_drop=t.p_drop, weight=t.weight, prompt_prob=p.prompt_prob,
                               prefix_range=tuple(p.prefix_range)) for t in cfg.tasks]
    name = specs[0].task_id if len(specs) == 1 else "multitask"
    lead = cfg.tasks[0]
    mode = lead.mode

    def fresh() -> Trainer:
        params = restore_params(base)
        trainer = Trainer(params, AdamW(optim), _seed_rng(cfg, "finetune"),
                          configs=cfg.to_dict())
        trainer.codecs = restore_codecs(base)
        init = _seed_rng(cfg, "init/finetune")
        conditioner = new_conditioner(specs, params.config.d_model, world.alphabet, world.d_feat, init)
        overlay = lora_attach(params, lead.lora_rank, lead.lora_alpha, rng=init) if mode == "lora" else None
        trainer.attach_task(name, conditioner, overlay)
        return trainer

    trainer = _trainer(path, args.resume, fresh, optim, f.checkpoint_every, args.quiet)
    overlay, conditioner = restore_overlay(trainer.snapshot(), name)
    # the checkpoint must see the same arrays the optimizer updates
    trainer.attach_task(name, conditioner, overlay)
    trainer.overlay_meta[name]["tasks"] = [s.task_id for s in specs]

    symbols_range = tuple(cfg.world.symbols_range)
    policy = _policy(cfg)

    def sampler(task_id: str, rng: RngStream):
        return draw_task_sample(task_id, world, codec, rng, symbols_range, "prefix", policy)

    with metrics_to_file(cfg.paths.metrics_log):
        trainer.finetune(sampler, specs, max(0, f.steps - trainer.step), f.batch_size,
                         {s.task_id: conditioner for s in specs},
                         {s.task_id: overlay for s in specs} if overlay is not None else None, mode)
    trainer.save()
    return EXIT_OK


def cmd_generate(cfg: RunConfig, args: argparse.Namespace) -> int:
    world = load_world(cfg.paths.world)
    rng = _seed_rng(cfg, "generate")
    if args.task == "unconditional":
        ckpt = checkpoint_load(cfg.paths.pretrained)
        codec = _ssl_codec(ckpt)
        predictor, task, cond_task = NetPredictor(restore_params(ckpt)), "unconditional", "tts"
    else:
        task = normalize_task_name(args.task)
        ckpt = checkpoint_load(cfg.paths.finetuned)
        codec = _ssl_codec(ckpt)
        models = load_task_models(ckpt)
        if task not in models:
            raise ArgumentError(f"no fine-tuned model for task {task!r}; have {sorted(models)}")
        predictor, cond_task = models[task].predictor(), task

    sample = draw_task_sample(cond_task, world, codec, rng_fork(rng, "sample"), tuple(cfg.world.symbols_range),
                              cfg.decode.prompt_source)
    cond = None if task == "unconditional" else sample.condition
    w = cfg.decode.cfg_weight if task in PROMPT_TASKS else 0.0
    tokens = iterative_decode(predictor, len(sample.target), sample.prompt, cond,
                              _decode_config(cfg, rng_fork(rng, "decode"), w), vocab_size=predictor.vocab_size)
    blocks = [tokens]
    feats = tokens_to_features(tokens, codec)
    if args.two_stage:
        a = load_acoustic_model(cfg)
        p = sample.prompt_len
        prompt = a.codec.encode(sample.utterance.features[:p]) if p else None
        acoustic_tokens = acoustic_generate(a.params, tokens, prompt, a.steps_per_layer, rng_fork(rng, "acoustic"),
                                            a.conditioner, decode=_decode_config(cfg))
        feats = a.codec.decode(acoustic_tokens)
        save_token_streams(Path(args.out).with_suffix(".acoustic.tok"), [acoustic_tokens], [sample.utterance],
                           {"task": task})
    ser = symbol_error_rate(symbols_from_features(feats[sample.prompt_len:], world), sample.reference)
    save_token_streams(args.out, blocks, [sample.utterance], {"task": task, "prompt_len": sample.prompt_len})
    logger.info("generated %s: %d tokens (prompt %d), readout error %.4f", task, len(tokens), sample.prompt_len, ser)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    world = load_world(cfg.paths.world)
    models: Dict[str, TaskModel] = {}
    if args.oracle:
        codec = _ssl_codec(checkpoint_load(cfg.paths.codebooks))
    else:
        ckpt = checkpoint_load(cfg.paths.finetuned)
        codec = _ssl_codec(ckpt)
        models = load_task_models(ckpt)
    tasks = args.tasks or [t.task for t in cfg.tasks]
    d = cfg.decode
    runner = TaskRunner(world, codec, models, _decode_config(cfg), cfg.seed, args.samples or d.n_samples,
                        d.prompt_source, tuple(cfg.world.symbols_range),
                        load_acoustic_model(cfg) if args.two_stage else None, args.oracle, d.cfg_weight)
    comparison = runner.run_comparison(tasks, parallel=args.parallel)
    payload = comparison.to_json()
    print(json.dumps(payload[0] if len(payload) == 1 else payload))
    if args.plot:
        plot_task_metrics(comparison.results, args.plot)
    if args.loss_plot:
        plot_loss_curve(cfg.paths.metrics_log, args.loss_plot)
    return EXIT_OK


def cmd_inspect_ckpt(cfg: RunConfig, args: argparse.Namespace) -> int:
    ckpt = checkpoint_load(args.path)
    report = {
        "magic": MAGIC.decode("ascii"),
        "version": VERSION,
        "step": ckpt.step,
        "arrays": [[name, list(shape)] for name, shape in ckpt.describe()],
        "codecs": sorted(ckpt.metadata.get("codecs", {})),
        "overlays": ckpt.overlay_tasks(),
    }
    print(json.dumps(report))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "make-world": cmd_make_world,
    "train-codebooks": cmd_train_codebooks,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "inspect-ckpt": cmd_inspect_ckpt,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY.PATH=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("--quiet", action="store_true", help="no progress bars")
    common.add_argument("-v", "--verbose", action="count", default=1, help="more logging (repeatable)")

    parser = argparse.ArgumentParser(prog="mgmkit", description="masked generative modeling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("make-world", parents=[common], help="write the toy world description")
    sub.add_parser("train-codebooks", parents=[common], help="train the SSL tokenizer and acoustic codec")
    pre = sub.add_parser("pretrain", parents=[common], help="unconditional pre-training")
    pre.add_argument("--stage", choices=("ssl", "acoustic"), default="ssl")
    pre.add_argument("--resume", action="store_true", help="continue from the stage's checkpoint if present")
    fin = sub.add_parser("finetune", parents=[common], help="task fine-tuning on the pre-trained net")
    fin.add_argument("--resume", action="store_true")
    gen = sub.add_parser("generate", parents=[common], help="decode one sample")
    gen.add_argument("--task", default="tts", help="tts, vc, se, tse, tse_text or unconditional")
    gen.add_argument("--two-stage", action="store_true", help="continue through the acoustic stage")
    gen.add_argument("--out", default="resources/generated.tok")
    ev = sub.add_parser("eval", parents=[common], help="score fine-tuned tasks; JSON on stdout")
    ev.add_argument("--tasks", nargs="+")
    ev.add_argument("--samples", type=int, help="samples per task (default decode.n_samples)")
    ev.add_argument("--two-stage", action="store_true")
    ev.add_argument("--oracle", action="store_true", help="decode the ground truth instead of a model")
    ev.add_argument("--parallel", action="store_true", help="decode tasks on a thread pool")
    ev.add_argument("--plot", metavar="PNG", help="also render per-task metric bars")
    ev.add_argument("--loss-plot", metavar="PNG", help="also render the training curves in paths.metrics_log")
    ins = sub.add_parser("inspect-ckpt", parents=[common], help="describe a checkpoint; JSON on stdout")
    ins.add_argument("path")
    return parser


def run(command: str, config: Optional[str] = None, overrides: Sequence[str] = (),
        options: Optional[argparse.Namespace] = None) -> int:
    """Run one command; returns the process exit code."""
    if command not in COMMANDS:
        logger.error("unknown command %r", command)
        return EXIT_ARGS
    if options is None:
        if command == "inspect-ckpt":
            logger.error("inspect-ckpt needs a checkpoint path")
            return EXIT_ARGS
        options = build_parser().parse_args([command])
    try:
        document = apply_overrides(load_config(config), overrides)
        cfg = require_valid(document, command)
        return COMMANDS[command](cfg, options)
    except ConfigError as exc:
        for line in exc.errors:
            logger.error("config: %s", line)
        return EXIT_CONFIG
    except CheckpointError as exc:
        logger.error("checkpoint: %s", exc)
        return EXIT_CHECKPOINT
    except ArgumentError as exc:
        logger.error("%s", exc)
        return EXIT_ARGS
    except Exception as exc:  # noqa: BLE001
        logger.debug("%s failed", command, exc_info=True)
        logger.error("%s failed: %s", command, exc)
        return EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, every usage error maps to the bad-arguments code
        return EXIT_OK if not exc.code else EXIT_ARGS
    configure_logging(0 if args.quiet and args.verbose <= 1 else args.verbose)
    return run(args.command, args.config, args.overrides, args)


if __name__ == "__main__":
    sys.exit(main())
