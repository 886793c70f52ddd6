import numpy as np
import pytest

from mgmkit.adaptation.adapter import FrameAdapter, adapter_inject
from mgmkit.adaptation.conditioning import TaskConditioner, concat_condition, condition_dropout, interp_align
from mgmkit.adaptation.lora import LoraOverlay, lora_attach, lora_merge, resolve_targets
from mgmkit.heartofitall.conditions import TaskCondition
from mgmkit.heartofitall.errors import ArgumentError, DomainError, ShapeError
from mgmkit.heartofitall.tokens import MaskState
from mgmkit.net.predictor import NetPredictor
from mgmkit.net.train import Example, train_step
from mgmkit.net.transformer import forward
from mgmkit.numerics.optim import AdamW, AdamWConfig
from mgmkit.numerics.rng import RngStream


def _state(cfg, n, seed=0):
    return MaskState(RngStream(seed).integers(0, cfg.vocab_size, size=n), np.ones(n, dtype=bool), 0, cfg.mask_id)


def _example(cfg, n, seed=0, condition=None):
    targets = RngStream(seed).integers(0, cfg.vocab_size, size=n)
    mask = np.arange(n) % 2 == 0
    return Example(MaskState.from_mask(targets, mask, cfg.mask_id), targets, mask, condition)


# interpolation

def test_interp_same_length_is_identity():
    x = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(interp_align(x, 4), x)


def test_interp_endpoints_are_aligned():
    out = interp_align(np.array([[0.0], [1.0]]), 3)
    np.testing.assert_allclose(out[:, 0], [0.0, 0.5, 1.0])
    down = interp_align(np.array([[0.0], [1.0], [2.0], [3.0], [4.0]]), 3)
    np.testing.assert_allclose(down[:, 0], [0.0, 2.0, 4.0])


def test_interp_single_rows():
    np.testing.assert_array_equal(interp_align(np.array([[2.0, 3.0]]), 4), np.tile([2.0, 3.0], (4, 1)))
    np.testing.assert_array_equal(interp_align(np.array([[1.0], [5.0]]), 1), [[1.0]])


def test_interp_rejects_empty_condition():
    with pytest.raises(ArgumentError):
        interp_align(np.zeros((0, 3)), 4)
    with pytest.raises(ShapeError):
        interp_align(np.zeros(3), 4)


# adapter and prefix conditions

def test_adapter_starts_at_zero(rng):
    adapter = FrameAdapter.create(3, 16, rng)
    out = adapter_inject(rng.normal(size=(7, 3)), adapter)
    assert out.shape == (7, 16)
    assert not out.any()


def test_adapter_rejects_wrong_width(rng):
    adapter = FrameAdapter.create(3, 16, rng)
    with pytest.raises(ShapeError):
        adapter_inject(np.zeros((4, 5)), adapter)


def test_adapter_learns_after_one_step(tiny_params, rng):
    cfg = tiny_params.config
    conditioner = TaskConditioner.create(cfg.d_model, rng, d_c=3)
    condition = TaskCondition.frames(rng.normal(size=(5, 3)))
    opt = AdamW(AdamWConfig(lr=1e-2, warmup=0))
    train_step(tiny_params, [_example(cfg, 8, condition=condition)], opt, conditioner=conditioner)
    assert np.abs(conditioner.adapter.w2).max() > 0
    predictor = NetPredictor(tiny_params, conditioner)
    state = _state(cfg, 8)
    assert not np.allclose(predictor(state, condition), predictor(state, None))


def test_empty_prefix_equals_unconditional(tiny_params, rng):
    conditioner = TaskConditioner.create(tiny_params.config.d_model, rng, n_symbols=5)
    predictor = NetPredictor(tiny_params, conditioner)
    state = _state(tiny_params.config, 6)
    np.testing.assert_array_equal(predictor(state, TaskCondition.text([])), predictor(state, None))


def test_prefix_changes_logits(tiny_params, rng):
    conditioner = TaskConditioner.create(tiny_params.config.d_model, rng, n_symbols=5)
    predictor = NetPredictor(tiny_params, conditioner)
    state = _state(tiny_params.config, 6)
    logits = predictor(state, TaskCondition.text([1, 4, 2]))
    assert logits.shape == (6, tiny_params.config.vocab_size)
    assert not np.allclose(logits, predictor(state, None))


def test_concat_condition_embeds_symbols(rng):
    table = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(concat_condition(TaskCondition.text([3, 0]), table), table[[3, 0]])
    with pytest.raises(DomainError):
        concat_condition(TaskCondition.text([4]), table)
    with pytest.raises(ArgumentError):
        concat_condition(TaskCondition.none(), table)


def test_conditioner_without_a_channel_module(tiny_params, rng):
    conditioner = TaskConditioner.create(tiny_params.config.d_model, rng, n_symbols=5)
    with pytest.raises(ArgumentError, match="adapter"):
        NetPredictor(tiny_params, conditioner)(_state(tiny_params.config, 4), TaskCondition.frames(np.ones((2, 3))))


def test_conditioner_arrays_round_trip(rng):
    conditioner = TaskConditioner.create(8, rng, n_symbols=5, d_c=3)
    clone = TaskConditioner.from_arrays(conditioner.arrays())
    assert clone.arrays().keys() == conditioner.arrays().keys()
    np.testing.assert_array_equal(clone.text_emb, conditioner.text_emb)


def test_condition_dropout_rate():
    cond = TaskCondition.text([1, 2])
    rng = RngStream(17)
    dropped = sum(condition_dropout(cond, 0.3, rng).is_none for _ in range(10_000))
    assert dropped / 10_000 == pytest.approx(0.3, abs=0.02)
    assert condition_dropout(cond, 0.0, rng) is cond
    assert condition_dropout(cond, 1.0, rng).is_none
    with pytest.raises(DomainError):
        condition_dropout(cond, 1.5, rng)


# LoRA

def test_lora_count_for_one_square_matrix(tiny_params):
    overlay = lora_attach(tiny_params, rank=16, targets=["layers.0.attn.wq"])
    assert overlay.n_trainable == 512


def test_lora_count_closed_form(tiny_params):
    cfg = tiny_params.config
    r = 4
    overlay = lora_attach(tiny_params, rank=r)
    d, f = cfg.d_model, cfg.d_ff
    expected = cfg.n_layers * (4 * r * (d + d) + 2 * r * (d + f))
    assert overlay.n_trainable == expected
    assert overlay.alpha == 2 * r


def test_unknown_target(tiny_params):
    with pytest.raises(ArgumentError, match="unknown LoRA target"):
        resolve_targets(tiny_params, ["attn.wz"])
    with pytest.raises(ArgumentError):
        lora_attach(tiny_params, rank=0)


def test_fresh_overlay_changes_nothing(tiny_params):
    overlay = lora_attach(tiny_params, rank=4, rng=RngStream(2))
    meta = RngStream(5)
    for i in range(100):
        state = _state(tiny_params.config, int(meta.integers(1, 20)), seed=i)
        np.testing.assert_array_equal(forward(tiny_params, state, overlay=overlay), forward(tiny_params, state))


def test_lora_training_keeps_the_base_frozen(tiny_params):
    before = {k: v.copy() for k, v in tiny_params.arrays.items()}
    overlay = lora_attach(tiny_params, rank=4, rng=RngStream(2))
    opt = AdamW(AdamWConfig(lr=1e-2, warmup=0))
    for s in range(3):
        train_step(tiny_params, [_example(tiny_params.config, 10, seed=s)], opt, overlay=overlay, train_base=False)
    for k, v in before.items():
        np.testing.assert_array_equal(tiny_params.arrays[k], v)
    assert any(np.abs(b).max() > 0 for b in overlay.B.values())


def test_merge_matches_the_attached_overlay(tiny_params):
    overlay = lora_attach(tiny_params, rank=4, rng=RngStream(2))
    opt = AdamW(AdamWConfig(lr=1e-2, warmup=0))
    for s in range(3):
        train_step(tiny_params, [_example(tiny_params.config, 10, seed=s)], opt, overlay=overlay, train_base=False)
    state = _state(tiny_params.config, 10, seed=9)
    attached = forward(tiny_params, state, overlay=overlay)
    base_wq = tiny_params.arrays["layers.0.attn.wq"].copy()
    merged = lora_merge(tiny_params, overlay)
    np.testing.assert_allclose(forward(merged, state), attached, atol=1e-5)
    np.testing.assert_array_equal(tiny_params.arrays["layers.0.attn.wq"], base_wq)
    with pytest.raises(ArgumentError, match="already merged"):
        lora_merge(tiny_params, overlay)


def test_overlay_arrays_round_trip(tiny_params):
    overlay = lora_attach(tiny_params, rank=2, targets=["attn.wv"], rng=RngStream(1))
    clone = LoraOverlay.from_arrays(overlay.rank, overlay.alpha, overlay.arrays())
    assert clone.targets == overlay.targets
    assert clone.scale == overlay.scale
