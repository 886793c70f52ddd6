import json
from pathlib import Path

import numpy as np
import pytest

from mgmkit.algorithms.iterative import iterative_decode
from mgmkit.heartofitall.tokens import DecodeConfig
from mgmkit.main import main
from mgmkit.net.predictor import NetPredictor
from mgmkit.numerics.rng import RngStream, rng_fork
from mgmkit.toyworld.readout import speaker_vector, symbol_error_rate, symbols_from_features, tokens_to_features
from mgmkit.toyworld.tasks import draw_task_sample
from mgmkit.training.checkpoint import checkpoint_load
from mgmkit.training.loop import restore_codecs, restore_params
from mgmkit.utilities.data_loader import load_token_streams, load_world
from mgmkit.utilities.visualizer import parse_metrics_log


def _tiny_config(root: Path, seed: int = 0, **sections) -> Path:
    doc = {
        "seed": seed,
        "world": {"alphabet": 6, "speakers": 4, "d_feat": 8, "symbols_range": [2, 3], "min_duration": 2,
                  "max_duration": 3, "corpus_size": 16, "held_out": 2},
        "quantizers": {"ssl_K": 16, "ssl_dim": 4, "rvq_layers": 2, "rvq_K": 8, "rvq_dim": 4, "steps": 5,
                       "batch_frames": 64},
        "net": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_len": 64},
        "pretrain": {"steps": 3, "acoustic_steps": 2, "warmup": 0, "batch_tokens": 32, "checkpoint_every": 100},
        "finetune": {"steps": 2, "batch_size": 2, "warmup": 0, "checkpoint_every": 100},
        "tasks": [{"task": "tts", "weight": 0.5, "lora_rank": 2}, {"task": "se", "weight": 0.5, "lora_rank": 2}],
        "decode": {"steps": 3, "steps_per_layer": 2, "n_samples": 2},
        "paths": {name: str(root / f) for name, f in (
            ("world", "world.json"), ("codebooks", "codebooks.mgmk"), ("ssl_tokens", "ssl.tok"),
            ("acoustic_tokens", "acoustic.tok"), ("pretrained", "pretrained.mgmk"), ("acoustic", "acoustic.mgmk"),
            ("finetuned", "finetuned.mgmk"), ("metrics_log", "metrics.log"))},
    }
    for name, values in sections.items():
        if isinstance(values, dict):
            doc.setdefault(name, {}).update(values)
        else:
            doc[name] = values
    root.mkdir(parents=True, exist_ok=True)
    path = root / "run.json"
    path.write_text(json.dumps(doc))
    return path


def _cli(*args) -> int:
    return main([*args, "--quiet"])


def _eval(config: Path, capsys, *extra) -> object:
    capsys.readouterr()
    assert _cli("eval", "--config", str(config), *extra) == 0
    return json.loads(capsys.readouterr().out)


def _run_pipeline(config: Path) -> None:
    for command in (["make-world"], ["train-codebooks"], ["pretrain"], ["pretrain", "--stage", "acoustic"],
                    ["finetune"]):
        assert _cli(*command, "--config", str(config)) == 0, command


def test_world_and_codebooks(tmp_path, capsys):
    config = _tiny_config(tmp_path)
    assert _cli("make-world", "--config", str(config)) == 0
    assert _cli("train-codebooks", "--config", str(config)) == 0
    capsys.readouterr()
    assert _cli("inspect-ckpt", str(tmp_path / "codebooks.mgmk")) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["codecs"] == ["acoustic", "ssl"]
    assert report["overlays"] == []

    ssl, sidecar = load_token_streams(tmp_path / "ssl.tok")
    acoustic, _ = load_token_streams(tmp_path / "acoustic.tok")
    assert len(ssl) == len(acoustic) == 16
    assert sidecar["held_out"] == 2
    assert all(s.shape == (1, a.shape[1]) and a.shape[0] == 2 for s, a in zip(ssl, acoustic))
    assert max(int(a.max()) for a in acoustic) < 8


def test_full_pipeline(tmp_path, capsys):
    config = _tiny_config(tmp_path)
    _run_pipeline(config)
    curves = parse_metrics_log(tmp_path / "metrics.log")
    assert curves["pretrain"][0] == [1, 2, 3]
    assert curves["acoustic"][0] == [1, 2]
    assert sum(len(steps) for task, (steps, _) in curves.items() if task in ("tts", "se")) == 2

    out = tmp_path / "sample.tok"
    assert _cli("generate", "--config", str(config), "--task", "se", "--two-stage", "--out", str(out)) == 0
    blocks, sidecar = load_token_streams(out)
    assert sidecar["task"] == "se"
    assert len(blocks) == 1
    assert load_token_streams(out.with_suffix(".acoustic.tok"))[0][0].shape[0] == 2

    results = _eval(config, capsys, "--tasks", "tts", "se", "--two-stage", "--plot", str(tmp_path / "bars.png"),
                    "--loss-plot", str(tmp_path / "loss.png"))
    assert [r["task"] for r in results] == ["tts", "se"]
    assert all(0.0 <= r["symbol_error_rate"] and r["n_samples"] == 2 for r in results)
    assert (tmp_path / "bars.png").exists()
    assert (tmp_path / "loss.png").read_bytes()[:4] == b"\x89PNG"

    capsys.readouterr()
    assert _cli("inspect-ckpt", str(tmp_path / "finetuned.mgmk")) == 0
    assert json.loads(capsys.readouterr().out)["overlays"] == ["multitask"]


def test_resume_continues_pretraining(tmp_path):
    config = _tiny_config(tmp_path)
    for command in (["make-world"], ["train-codebooks"], ["pretrain"]):
        assert _cli(*command, "--config", str(config)) == 0
    assert _cli("pretrain", "--config", str(config), "--resume", "--set", "pretrain.steps=5") == 0
    steps = parse_metrics_log(tmp_path / "metrics.log")["pretrain"][0]
    assert steps == [1, 2, 3, 4, 5]


def test_unconditional_generation_from_the_pretrained_net(tmp_path):
    config = _tiny_config(tmp_path)
    for command in (["make-world"], ["train-codebooks"], ["pretrain"]):
        assert _cli(*command, "--config", str(config)) == 0
    out = tmp_path / "free.tok"
    assert _cli("generate", "--config", str(config), "--task", "unconditional", "--out", str(out)) == 0
    assert load_token_streams(out)[1]["task"] == "unconditional"
    # nothing fine-tuned yet
    assert _cli("generate", "--config", str(config), "--task", "tts", "--out", str(out)) == 4


@pytest.mark.slow
def test_pipeline_is_deterministic(tmp_path, capsys):
    outputs = []
    for run in ("a", "b"):
        config = _tiny_config(tmp_path / run, seed=17)
        _run_pipeline(config)
        outputs.append(((tmp_path / run / "metrics.log").read_text(),
                        _eval(config, capsys, "--tasks", "tts", "se")))
    assert outputs[0] == outputs[1]


# directional experiments

_FULL_SCALE = dict(
    world={"alphabet": 8, "speakers": 8, "corpus_size": 2000, "held_out": 200, "symbols_range": [3, 5],
           "max_duration": 3},
    quantizers={"ssl_K": 64, "ssl_dim": 8, "rvq_layers": 3, "rvq_K": 32, "steps": 500, "batch_frames": 256},
    net={"d_model": 32, "n_layers": 2, "n_heads": 2, "d_ff": 64, "max_len": 64},
    pretrain={"steps": 20000, "acoustic_steps": 5000, "lr": 1e-3, "warmup": 200, "batch_tokens": 256,
              "checkpoint_every": 5000},
    finetune={"steps": 2000, "batch_size": 4, "lr": 1e-3, "warmup": 100, "checkpoint_every": 1000},
    tasks=[{"task": "tts", "weight": 1.0, "lora_rank": 8, "p_drop": 0.1}],
    decode={"steps": 8, "n_samples": 200},
)

_MULTITASK = [{"task": "tts", "weight": 0.5, "lora_rank": 8}, {"task": "vc", "weight": 0.1, "lora_rank": 8},
              {"task": "tse", "weight": 0.2, "lora_rank": 8}, {"task": "se", "weight": 0.2, "lora_rank": 8}]


def _train(config: Path, *commands) -> None:
    for command in commands:
        assert _cli(*command, "--config", str(config)) == 0, command


@pytest.mark.slow
def test_pretraining_lowers_tts_error(tmp_path, capsys):
    wins, reductions = 0, []
    for seed in range(5):
        errors = {}
        for variant, steps in (("pretrained", _FULL_SCALE["pretrain"]["steps"]), ("scratch", 0)):
            pretrain = dict(_FULL_SCALE["pretrain"], steps=steps)
            config = _tiny_config(tmp_path / f"{seed}-{variant}", seed=seed, **dict(_FULL_SCALE, pretrain=pretrain))
            _train(config, ["make-world"], ["train-codebooks"], ["pretrain"], ["finetune"])
            errors[variant] = _eval(config, capsys, "--tasks", "tts")["symbol_error_rate"]
        wins += errors["pretrained"] < errors["scratch"]
        scratch = errors["scratch"]
        reductions.append((scratch - errors["pretrained"]) / scratch if scratch > 0 else 0.0)
    assert wins >= 4
    assert float(np.median(reductions)) >= 0.2


@pytest.mark.slow
def test_unconditional_continuations_keep_the_voice_but_not_the_words(tmp_path, capsys):
    config = _tiny_config(tmp_path, seed=2, **_FULL_SCALE)
    _train(config, ["make-world"], ["train-codebooks"], ["pretrain"], ["finetune"])
    world = load_world(tmp_path / "world.json")
    params = restore_params(checkpoint_load(tmp_path / "pretrained.mgmk"))
    codec = restore_codecs(checkpoint_load(tmp_path / "codebooks.mgmk"))["ssl"]
    predictor = NetPredictor(params)

    rng = RngStream(31)
    same_speaker_wins, errors = 0, []
    for trial in range(200):
        sample = draw_task_sample("tts", world, codec, rng_fork(rng, f"sample/{trial}"), (3, 5), "other_utterance")
        tokens = iterative_decode(predictor, len(sample.target), sample.prompt, None,
                                  DecodeConfig(steps=8, rng=rng_fork(rng, f"decode/{trial}")),
                                  vocab_size=predictor.vocab_size)
        feats = tokens_to_features(tokens, codec)[sample.prompt_len:]
        voice = speaker_vector(feats, world)
        speaker = sample.utterance.speaker
        other = (speaker + 1 + int(rng.integers(0, world.speakers - 1))) % world.speakers

        def cosine(offset):
            return float(voice @ offset / (np.linalg.norm(voice) * np.linalg.norm(offset) + 1e-12))

        same_speaker_wins += cosine(world.speaker_offsets[speaker]) > cosine(world.speaker_offsets[other])
        errors.append(symbol_error_rate(symbols_from_features(feats, world), sample.reference))

    assert same_speaker_wins >= 180
    assert float(np.mean(errors)) > 0.5
    assert _eval(config, capsys, "--tasks", "tts")["symbol_error_rate"] < 0.15


@pytest.mark.slow
def test_text_guidance_helps_speaker_extraction(tmp_path, capsys):
    wins = 0
    for seed in range(5):
        config = _tiny_config(tmp_path / str(seed), seed=seed, **dict(_FULL_SCALE, tasks=_MULTITASK))
        _train(config, ["make-world"], ["train-codebooks"], ["pretrain"], ["finetune"])
        plain, guided = _eval(config, capsys, "--tasks", "tse", "tse_text")
        assert (plain["task"], guided["task"]) == ("tse", "tse_text")
        wins += guided["symbol_error_rate"] < plain["symbol_error_rate"]
    assert wins >= 4


@pytest.mark.slow
def test_acoustic_stage_keeps_the_content(tmp_path, capsys):
    config = _tiny_config(tmp_path, seed=1, **_FULL_SCALE)
    _train(config, ["make-world"], ["train-codebooks"], ["pretrain"], ["pretrain", "--stage", "acoustic"],
           ["finetune"])
    ssl_only = _eval(config, capsys, "--tasks", "tts")["symbol_error_rate"]
    two_stage = _eval(config, capsys, "--tasks", "tts", "--two-stage")["symbol_error_rate"]
    assert two_stage <= 1.5 * ssl_only
