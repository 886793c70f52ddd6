import numpy as np
import pytest

from mgmkit.heartofitall.conditions import ConditionKind
from mgmkit.heartofitall.errors import ArgumentError, DomainError
from mgmkit.numerics.rng import RngStream
from mgmkit.quantizers.codebook import vq_quantize
from mgmkit.toyworld.readout import (collapse, edit_distance, speaker_similarity, symbol_error_rate,
                                     symbols_from_features, symbols_from_tokens)
from mgmkit.toyworld.tasks import (Degradation, PromptPolicy, add_noise, band_limit, build_task_sample, degrade,
                                   draw_task_sample, fit_length, reverberate)
from mgmkit.toyworld.world import Utterance, gen_utterance, make_world, render

NO_DEGRADATION = Degradation(noise_prob=0.0, reverb_prob=0.0, band_prob=0.0)


def test_noise_free_frames_are_embedding_plus_offset(clean_world):
    utt = gen_utterance(clean_world, 5, RngStream(1))
    expected = clean_world.phoneme_emb[utt.frame_symbols()] + clean_world.speaker_offsets[utt.speaker]
    np.testing.assert_array_equal(utt.features, expected)


def test_world_and_utterances_are_deterministic():
    a, b = make_world(seed=11, alphabet=5, speakers=3, d_feat=4), make_world(seed=11, alphabet=5, speakers=3, d_feat=4)
    np.testing.assert_array_equal(a.phoneme_emb, b.phoneme_emb)
    np.testing.assert_array_equal(a.speaker_offsets, b.speaker_offsets)
    u, v = gen_utterance(a, 6, RngStream(2)), gen_utterance(b, 6, RngStream(2))
    np.testing.assert_array_equal(u.features, v.features)
    assert not np.array_equal(make_world(seed=12, alphabet=5, speakers=3, d_feat=4).phoneme_emb, a.phoneme_emb)


def test_durations_stay_in_range(tiny_world, rng):
    for _ in range(50):
        utt = gen_utterance(tiny_world, 7, rng)
        assert utt.durations.min() >= tiny_world.min_duration
        assert utt.durations.max() <= tiny_world.max_duration
        assert utt.n == utt.durations.sum() == utt.features.shape[0]


def test_world_argument_checks():
    with pytest.raises(ArgumentError):
        make_world(min_duration=3, max_duration=2)
    with pytest.raises(DomainError):
        make_world(sigma=-1.0)
    with pytest.raises(ArgumentError):
        gen_utterance(make_world(), 0, RngStream(0))


def test_utterances_of_different_speakers_do_not_join(tiny_world, rng):
    a = gen_utterance(tiny_world, 3, rng, speaker=0)
    b = gen_utterance(tiny_world, 3, rng, speaker=1)
    with pytest.raises(ArgumentError):
        Utterance.concat(a, b)
    c = gen_utterance(tiny_world, 2, rng, speaker=0)
    joined = Utterance.concat(a, c)
    assert joined.n == a.n + c.n
    assert joined.symbols.tolist() == a.symbols.tolist() + c.symbols.tolist()


# degradations

def test_zero_db_noise_matches_signal_power(rng):
    x = rng.normal(size=(200, 8)).astype(np.float32) * 3
    noisy = add_noise(x, 0.0, rng)
    ratio = np.sqrt(np.mean((noisy - x).astype(np.float64) ** 2)) / np.sqrt(np.mean(x.astype(np.float64) ** 2))
    assert ratio == pytest.approx(1.0, rel=1e-4)


def test_reverb_is_a_causal_average():
    x = np.array([[0.0], [2.0], [4.0]], dtype=np.float32)
    np.testing.assert_allclose(reverberate(x, 2)[:, 0], [0.0, 1.0, 3.0])
    np.testing.assert_array_equal(reverberate(x, 1), x)


def test_full_band_keeps_the_signal(rng):
    x = rng.normal(size=(10, 4)).astype(np.float32)
    np.testing.assert_allclose(band_limit(x, 1.0, rng), x, atol=1e-5)
    assert np.linalg.matrix_rank(band_limit(x, 0.5, rng)) == 2


def test_degrade_with_a_forced_snr(rng):
    x = rng.normal(size=(20, 4)).astype(np.float32)
    out, applied = degrade(x, rng, NO_DEGRADATION, snr_db=5.0)
    assert applied == ["noise:5.00dB"]
    assert not np.array_equal(out, x)
    clean, none = degrade(x, rng, NO_DEGRADATION)
    assert none == []
    np.testing.assert_array_equal(clean, x)


def test_degradation_chain_probabilities():
    rng = RngStream(31)
    x = np.ones((6, 4), dtype=np.float32)
    runs = [degrade(x, rng)[1] for _ in range(4000)]
    rate = lambda kind: np.mean([any(a.startswith(kind) for a in r) for r in runs])
    assert rate("noise") == pytest.approx(0.9, abs=0.02)
    assert rate("reverb") == pytest.approx(0.35, abs=0.03)
    assert rate("band") == pytest.approx(0.25, abs=0.03)


# task samples

def test_zero_interferer_leaves_the_clean_mixture(clean_world, exact_codebook, rng):
    utt = gen_utterance(clean_world, 4, rng)
    sample = build_task_sample("tse", utt, clean_world, exact_codebook, rng,
                               interferer=np.zeros_like(utt.features))
    np.testing.assert_array_equal(sample.condition.features, utt.features)


def test_interferer_must_match(clean_world, exact_codebook, rng):
    utt = gen_utterance(clean_world, 4, rng)
    with pytest.raises(ArgumentError, match="interferer"):
        build_task_sample("tse", utt, clean_world, exact_codebook, rng, interferer=np.zeros((2, 8)))
    with pytest.raises(ArgumentError, match="interferer"):
        build_task_sample("tse", utt, clean_world, exact_codebook, rng)


def test_voice_conversion_never_keeps_the_speaker(clean_world, exact_codebook, rng):
    utt = gen_utterance(clean_world, 4, rng, speaker=2)
    sample = build_task_sample("vc", utt, clean_world, exact_codebook, rng, other_speaker=2)
    assert sample.condition_speaker not in (None, 2)
    expected = utt.features - clean_world.speaker_offsets[2] + clean_world.speaker_offsets[sample.condition_speaker]
    np.testing.assert_allclose(sample.condition.features, expected, atol=1e-6)


def test_voice_conversion_needs_two_speakers(exact_codebook, rng):
    lonely = make_world(seed=1, alphabet=6, speakers=1, d_feat=8)
    with pytest.raises(ArgumentError, match="two speakers"):
        build_task_sample("vc", gen_utterance(lonely, 3, rng), lonely, exact_codebook, rng)


def test_other_utterance_prompt_is_joined_in_front(clean_world, exact_codebook, rng):
    utt = gen_utterance(clean_world, 4, rng, speaker=1)
    prompt_utt = gen_utterance(clean_world, 3, rng, speaker=1)
    sample = build_task_sample("tts", utt, clean_world, exact_codebook, rng, prompt_utterance=prompt_utt)
    assert sample.prompt_len == prompt_utt.n
    assert len(sample.target) == prompt_utt.n + utt.n
    np.testing.assert_array_equal(sample.prompt, sample.target[:prompt_utt.n])
    np.testing.assert_array_equal(sample.reference, collapse(utt.symbols))
    assert sample.condition.symbols.tolist() == prompt_utt.symbols.tolist() + utt.symbols.tolist()


def test_enhancement_has_no_prompt(clean_world, exact_codebook, rng):
    utt = gen_utterance(clean_world, 4, rng)
    sample = build_task_sample("se", utt, clean_world, exact_codebook, rng, prompt_len=3)
    assert sample.prompt_len == 0
    assert sample.condition.kind is ConditionKind.FRAME_LEVEL


def test_prefix_prompt_policy(clean_world, exact_codebook, rng):
    policy = PromptPolicy(prompt_prob=1.0, prefix_range=(0.5, 0.5))
    sample = draw_task_sample("tts", clean_world, exact_codebook, rng, policy=policy)
    assert sample.prompt_len == len(sample.target) // 2


def test_drawn_extraction_sample_has_a_matching_mixture(clean_world, exact_codebook, rng):
    sample = draw_task_sample("tse_text", clean_world, exact_codebook, rng, prompt_source="other_utterance")
    assert sample.condition.features.shape == sample.utterance.features.shape
    assert sample.condition.kind is ConditionKind.COMPOSITE
    with pytest.raises(ArgumentError, match="prompt source"):
        draw_task_sample("tts", clean_world, exact_codebook, rng, prompt_source="elsewhere")


def test_fit_length():
    x = np.arange(3.0)[:, None]
    assert fit_length(x, 7)[:, 0].tolist() == [0, 1, 2, 0, 1, 2, 0]
    assert fit_length(x, 2).shape == (2, 1)


# readout

def test_exact_readout_of_clean_tokens(clean_world, exact_codebook):
    rng = RngStream(13)
    for _ in range(20):
        utt = gen_utterance(clean_world, 6, rng)
        tokens = vq_quantize(utt.features, exact_codebook)
        np.testing.assert_array_equal(symbols_from_tokens(tokens, clean_world, exact_codebook), collapse(utt.symbols))


def test_constant_tokens_read_as_one_symbol(clean_world, exact_codebook):
    assert len(symbols_from_tokens(np.full(9, 4), clean_world, exact_codebook)) == 1
    assert len(symbols_from_features(np.zeros((0, 8)), clean_world)) == 0


def test_render_without_noise_source(tiny_world):
    frames = render(tiny_world, np.array([0, 1]), np.array([2, 1]), 0)
    assert frames.shape == (3, tiny_world.d_feat)
    np.testing.assert_array_equal(frames[0], frames[1])


@pytest.mark.parametrize("hyp, ref, rate", [
    ([1, 2, 3], [1, 2, 3], 0.0),
    ([1, 3], [1, 2, 3], 1 / 3),
    ([], [1, 2], 1.0),
    ([4, 4], [], 2.0),
    ([2, 1], [1, 2], 1.0),
])
def test_symbol_error_rate(hyp, ref, rate):
    assert symbol_error_rate(hyp, ref) == pytest.approx(rate)


def test_edit_distance_and_collapse():
    assert edit_distance("kitten", "sitting") == 3
    assert collapse([3, 3, 5, 5, 5, 3]).tolist() == [3, 5, 3]
    assert collapse([]).tolist() == []


def test_speaker_similarity(clean_world, rng):
    a = gen_utterance(clean_world, 6, rng, speaker=0).features
    b = gen_utterance(clean_world, 6, rng, speaker=0).features
    c = gen_utterance(clean_world, 6, rng, speaker=3).features
    same = speaker_similarity(a, b, clean_world)
    assert same == pytest.approx(1.0, abs=1e-4)
    assert speaker_similarity(a, c, clean_world) < same
