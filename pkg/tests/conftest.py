# shared seeded fixtures; everything here is small enough to build per test

import numpy as np
import pytest

from mgmkit.net.transformer import NetConfig, build
from mgmkit.numerics.rng import RngStream
from mgmkit.quantizers.codebook import Codebook
from mgmkit.quantizers.codec import CodecConfig, FeatureCodec
from mgmkit.quantizers.rvq import RvqCodebook
from mgmkit.toyworld.world import make_world


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def tiny_world():
    return make_world(seed=3, alphabet=6, speakers=4, d_feat=8)


@pytest.fixture
def clean_world():
    # noise-free, small speaker offsets: symbol readout is exact
    return make_world(seed=5, alphabet=6, speakers=4, d_feat=8, sigma=0.0, speaker_scale=0.1)


def exact_codes(world) -> np.ndarray:
    """Every phoneme + speaker combination, so noise-free frames quantize losslessly."""
    return (world.phoneme_emb[:, None, :] + world.speaker_offsets[None, :, :]).reshape(-1, world.d_feat)


@pytest.fixture
def exact_codebook(clean_world):
    return Codebook.from_codes(exact_codes(clean_world))


def exact_codec(world) -> FeatureCodec:
    """An identity-projection single-layer codec holding the exact codes."""
    codes = exact_codes(world).astype(np.float32)
    config = CodecConfig(d_feat=world.d_feat, d_code=world.d_feat, n_layers=1, K=codes.shape[0])
    eye = np.eye(world.d_feat, dtype=np.float32)
    return FeatureCodec(config, eye.copy(), eye.copy(), RvqCodebook([Codebook.from_codes(codes)]))


@pytest.fixture
def clean_codec(clean_world):
    return exact_codec(clean_world)


@pytest.fixture
def tiny_net_config():
    return NetConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, vocab_size=12, max_len=128)


@pytest.fixture
def tiny_params(tiny_net_config):
    return build(tiny_net_config, RngStream(7))


@pytest.fixture
def tiny_codec(tiny_world):
    config = CodecConfig(d_feat=tiny_world.d_feat, d_code=4, n_layers=3, K=16)
    return FeatureCodec.create(config, RngStream(11))
