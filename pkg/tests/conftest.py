import numpy as np
import pytest

from config import ModelDims
from encoder import init_weights

# CodeBERT-family shape with room for the crossover sweep past n=1530
PAPER_LONG = ModelDims(d_mha=768, h=12, d_ffnn=3072, layers=12, max_len=4096, vocab_size=1024)


@pytest.fixture
def paper_dims():
    return ModelDims.preset("paper")


@pytest.fixture
def paper_long_dims():
    return PAPER_LONG


@pytest.fixture
def tiny_dims():
    return ModelDims(d_mha=8, h=2, d_ffnn=32, layers=3, max_len=16, vocab_size=64)


@pytest.fixture
def tiny_weights(tiny_dims):
    return init_weights(tiny_dims, seed=3, init_scale=0.5)


@pytest.fixture
def desk_small_dims():
    return ModelDims.preset("desk-small")


@pytest.fixture
def rng():
    return np.random.default_rng(42)
