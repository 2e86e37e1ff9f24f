import numpy as np
import pytest
from hypothesis import settings

from eie.data import SyntheticGenConfig, synth_generate
from eie.model import ModelConfig, init_params
from eie.rng import Rng
from eie.vocab import build_vocab

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

TINY = dict(hidden_dim=16, num_heads=2, feature_dim=8, image_tokens_per_xray=3)


@pytest.fixture(scope="session")
def tiny_ds():
    return synth_generate(SyntheticGenConfig(num_records=8, feature_dim=8, image_tokens=3), seed=0)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_ds):
    return build_vocab(r.summary for r in tiny_ds)


@pytest.fixture()
def tiny_model(tiny_vocab):
    cfg = ModelConfig(vocab_size=len(tiny_vocab), **TINY)
    return cfg, init_params(cfg, Rng(0).child("init"))


@pytest.fixture()
def np_rng():
    return np.random.default_rng(1234)
