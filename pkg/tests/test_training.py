import math
import struct

import numpy as np
import pytest

from mgmkit.adaptation.lora import lora_attach
from mgmkit.heartofitall.errors import (ArgumentError, CheckpointCorruptionError, CheckpointFormatError,
                                        CheckpointVersionError, DomainError)
from mgmkit.net.transformer import NetConfig, build
from mgmkit.numerics.optim import AdamW, AdamWConfig
from mgmkit.numerics.rng import RngStream
from mgmkit.toyworld.tasks import build_task_sample, draw_task_sample
from mgmkit.toyworld.world import gen_utterance
from mgmkit.training.checkpoint import (MAGIC, Checkpoint, assemble, checkpoint_load, checkpoint_save,
                                        decode_checkpoint, encode_checkpoint)
from mgmkit.training.finetune import TaskSpec, finetune_step, multitask_draw, new_conditioner
from mgmkit.training.loop import Trainer, batch_by_tokens, restore_codecs, restore_overlay, restore_params
from mgmkit.training.pretrain import PretrainConfig, draw_training_mask, pretrain_step
from mgmkit.utilities.logging_setup import metrics_to_file


def _corpus(vocab_size, count=6, seed=0):
    rng = RngStream(seed)
    return [rng.integers(0, vocab_size, size=int(rng.integers(8, 16))) for _ in range(count)]


# training masks

def test_prompt_is_never_masked(rng):
    cfg = PretrainConfig(prompt_prob=1.0, prefix_range=(0.2, 0.4))
    for _ in range(200):
        drawn = draw_training_mask(30, cfg, rng)
        assert 6 <= drawn.prompt_len <= 12
        assert not drawn.mask[:drawn.prompt_len].any()
        assert 0.0 < drawn.t <= 1.0


def test_full_schedule_time_masks_everything_after_the_prompt(rng):
    drawn = draw_training_mask(20, PretrainConfig(), rng, prompt_len=5, t=1.0)
    assert drawn.mask.tolist() == [False] * 5 + [True] * 15


def test_mask_rate_follows_the_schedule(rng):
    cfg = PretrainConfig(prompt_prob=0.0)
    rate = np.mean([draw_training_mask(100, cfg, rng, t=0.5).mask.mean() for _ in range(200)])
    assert rate == pytest.approx(math.sin(math.pi / 4), abs=0.02)


def test_prompt_probability(rng):
    cfg = PretrainConfig(prompt_prob=0.8, prefix_range=(0.5, 0.5))
    lens = [draw_training_mask(10, cfg, rng).prompt_len for _ in range(5000)]
    assert set(lens) == {0, 5}
    assert np.mean(np.array(lens) == 5) == pytest.approx(0.8, abs=0.03)


def test_pretrain_config_ranges():
    with pytest.raises(DomainError):
        PretrainConfig(prompt_prob=1.2)
    with pytest.raises(DomainError):
        PretrainConfig(prefix_range=(0.5, 0.2))


def test_pretrain_step_returns_a_finite_loss(tiny_params, rng):
    loss = pretrain_step(tiny_params, _corpus(tiny_params.config.vocab_size), PretrainConfig(), rng, AdamW())
    assert np.isfinite(loss) and loss >= 0


def test_batch_by_tokens_meets_the_budget(rng):
    corpus = _corpus(12)
    batch = batch_by_tokens(corpus, 40, rng)
    assert sum(len(s) for s in batch) >= 40
    assert len(batch_by_tokens(corpus, 0, rng)) == 1


# tasks and multitask mixing

def test_multitask_proportions():
    specs = [TaskSpec.for_task("tts", weight=0.5), TaskSpec.for_task("vc", weight=0.1),
             TaskSpec.for_task("tse", weight=0.2), TaskSpec.for_task("se", weight=0.2)]
    rng = RngStream(21)
    draws = [multitask_draw(specs, rng) for _ in range(20_000)]
    for spec in specs:
        assert draws.count(spec.task_id) / len(draws) == pytest.approx(spec.weight, abs=0.015)


def test_multitask_weights_must_sum_to_one(rng):
    with pytest.raises(ArgumentError, match="sum to 1"):
        multitask_draw([TaskSpec.for_task("tts", weight=0.5), TaskSpec.for_task("se", weight=0.4)], rng)
    with pytest.raises(ArgumentError):
        multitask_draw([], rng)


def test_unknown_task():
    with pytest.raises(ArgumentError, match="unknown task"):
        TaskSpec.for_task("asr")


def _tts_setup(world, codebook):
    cfg = NetConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, vocab_size=codebook.K, max_len=128)
    params = build(cfg, RngStream(4))
    spec = TaskSpec.for_task("tts")
    conditioner = new_conditioner([spec], cfg.d_model, world.alphabet, world.d_feat, RngStream(5))
    return params, spec, conditioner


def test_finetune_rejects_a_sample_of_another_kind(clean_world, exact_codebook, rng):
    params, _, conditioner = _tts_setup(clean_world, exact_codebook)
    sample = build_task_sample("tts", gen_utterance(clean_world, 4, rng), clean_world, exact_codebook, rng)
    with pytest.raises(ArgumentError, match="expects a frame_level condition"):
        finetune_step(params, [sample], TaskSpec.for_task("vc"), rng, AdamW(), conditioner)
    with pytest.raises(ArgumentError, match="mode"):
        finetune_step(params, [sample], TaskSpec.for_task("tts"), rng, AdamW(), conditioner, mode="half")


def test_lora_finetune_leaves_the_base_untouched(clean_world, exact_codebook, rng):
    params, _, conditioner = _tts_setup(clean_world, exact_codebook)
    spec = TaskSpec.for_task("tts", p_drop=0.0)
    before = {k: v.copy() for k, v in params.arrays.items()}
    table = conditioner.text_emb.copy()
    overlay = lora_attach(params, rank=2, rng=RngStream(6))
    opt = AdamW(AdamWConfig(lr=1e-2, warmup=0))
    batch = [draw_task_sample("tts", clean_world, exact_codebook, rng) for _ in range(2)]
    finetune_step(params, batch, spec, rng, opt, conditioner, overlay, "lora")
    for k, v in before.items():
        np.testing.assert_array_equal(params.arrays[k], v)
    assert not np.array_equal(conditioner.text_emb, table)


def test_new_conditioner_covers_the_channels_in_use(rng):
    both = new_conditioner([TaskSpec.for_task("tts", weight=0.5), TaskSpec.for_task("se", weight=0.5)],
                           16, 6, 8, rng)
    assert both.text_emb.shape == (6, 16)
    assert both.adapter.d_c == 8
    only_frames = new_conditioner([TaskSpec.for_task("vc")], 16, 6, 8, rng)
    assert only_frames.text_emb is None


@pytest.mark.slow
def test_finetune_loss_goes_down(clean_world, exact_codebook):
    params, spec, conditioner = _tts_setup(clean_world, exact_codebook)
    overlay = lora_attach(params, rank=4, rng=RngStream(6))
    trainer = Trainer(params, AdamW(AdamWConfig(lr=3e-3, warmup=20)), RngStream(9), quiet=True)
    sampler = lambda task, r: draw_task_sample(task, clean_world, exact_codebook, r)
    losses = trainer.finetune(sampler, [spec], 200, 4, {"tts": conditioner}, {"tts": overlay})
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


# checkpoints

def _checkpoint(tiny_params, tiny_codec):
    opt = AdamW()
    opt.step(tiny_params.arrays, {k: np.ones_like(v) for k, v in tiny_params.arrays.items()})
    overlay = lora_attach(tiny_params, rank=2, rng=RngStream(3))
    return assemble(tiny_params, {"ssl": tiny_codec}, {"tts": overlay.arrays()}, opt, RngStream(8),
                    {"train": {"lr": 3e-4}}, step=17)


def test_encode_decode_encode_is_byte_identical(tiny_params, tiny_codec):
    blob = encode_checkpoint(_checkpoint(tiny_params, tiny_codec))
    assert blob[:4] == MAGIC
    again = decode_checkpoint(blob)
    assert again.step == 17
    assert encode_checkpoint(again) == blob


def test_restored_pieces_match(tiny_params, tiny_codec, tmp_path):
    path = tmp_path / "run" / "model.mgmk"
    checkpoint_save(path, _checkpoint(tiny_params, tiny_codec))
    ckpt = checkpoint_load(path)
    params = restore_params(ckpt)
    for k, v in tiny_params.arrays.items():
        np.testing.assert_array_equal(params.arrays[k], v)
    assert params.config == tiny_params.config
    codec = restore_codecs(ckpt)["ssl"]
    np.testing.assert_array_equal(codec.rvq.layers[2].codes, tiny_codec.rvq.layers[2].codes)
    overlay, _ = restore_overlay(ckpt, "tts")
    assert overlay is not None and len(overlay.targets) == 6
    assert ckpt.overlay_tasks() == ["tts"]
    assert not list(path.parent.glob("*.tmp"))


def test_flipped_payload_byte_is_detected(tiny_params, tiny_codec):
    blob = bytearray(encode_checkpoint(_checkpoint(tiny_params, tiny_codec)))
    blob[-20] ^= 0xFF
    with pytest.raises(CheckpointCorruptionError, match="CRC"):
        decode_checkpoint(bytes(blob))


def test_bad_magic_is_named(tiny_params, tiny_codec):
    blob = b"XXXX" + encode_checkpoint(_checkpoint(tiny_params, tiny_codec))[4:]
    with pytest.raises(CheckpointFormatError, match="XXXX"):
        decode_checkpoint(blob)


def test_future_version_is_refused(tiny_params, tiny_codec):
    blob = bytearray(encode_checkpoint(_checkpoint(tiny_params, tiny_codec)))
    blob[4:8] = struct.pack("<I", 2)
    with pytest.raises(CheckpointVersionError, match="version 2"):
        decode_checkpoint(bytes(blob))


def test_missing_and_truncated_files(tmp_path):
    with pytest.raises(CheckpointFormatError, match="no such checkpoint"):
        checkpoint_load(tmp_path / "absent.mgmk")
    with pytest.raises(CheckpointCorruptionError, match="truncated"):
        decode_checkpoint(MAGIC + b"\x01\x00")


def test_empty_checkpoint_round_trip():
    blob = encode_checkpoint(Checkpoint())
    assert decode_checkpoint(blob).arrays == {}


@pytest.mark.parametrize("half", [2, pytest.param(100, marks=pytest.mark.slow)])
def test_resume_continues_the_run_exactly(tiny_net_config, tmp_path, half):
    corpus = _corpus(tiny_net_config.vocab_size, count=10, seed=3)
    opt_cfg = AdamWConfig(lr=1e-3, warmup=2)
    cfg = PretrainConfig(batch_tokens=24)

    def fresh():
        return Trainer(build(tiny_net_config, RngStream(7)), AdamW(opt_cfg), RngStream(99), quiet=True)

    straight_log, split_log = tmp_path / "straight.log", tmp_path / "split.log"
    with metrics_to_file(straight_log):
        straight = fresh()
        straight.pretrain(corpus, cfg, 2 * half)

    with metrics_to_file(split_log):
        first = fresh()
        first.pretrain(corpus, cfg, half)
        first.save(tmp_path / "mid.mgmk")
        resumed = Trainer.resume(checkpoint_load(tmp_path / "mid.mgmk"), optimizer_config=opt_cfg, quiet=True)
        assert resumed.step == half
        resumed.pretrain(corpus, cfg, half)

    assert resumed.step == 2 * half
    for k, v in straight.params.arrays.items():
        np.testing.assert_array_equal(resumed.params.arrays[k], v)
    assert split_log.read_text() == straight_log.read_text()
    assert straight_log.read_text().splitlines()[-1].startswith(f"step {2 * half} loss ")


def test_periodic_checkpoints(tiny_params, tmp_path):
    path = tmp_path / "ckpt.mgmk"
    trainer = Trainer(tiny_params, AdamW(), RngStream(1), checkpoint_path=path, checkpoint_every=2, quiet=True)
    trainer.pretrain(_corpus(tiny_params.config.vocab_size), PretrainConfig(batch_tokens=8), 3)
    assert checkpoint_load(path).step == 2


def test_resume_needs_rng_state(tiny_params):
    with pytest.raises(CheckpointFormatError, match="rng"):
        Trainer.resume(assemble(tiny_params, optimizer=AdamW()))
