import numpy as np
import pytest
from hypothesis import settings

from config import TrainConfig
from dtsl_network import ArchitectureSpec, init_network
from phemecommon import designate_labeled, encode_all, synthetic_corpus, synthetic_embeddings

settings.register_profile('dtsl', max_examples=40, deadline=None)
settings.load_profile('dtsl')

SMALL_SHARED = (4, 4, 4, 8, 8, 8)
SMALL_PATH = (8, 8, 8)


@pytest.fixture
def small_arch():
    """L = D = 8 with a narrow filter plan; trains in seconds."""
    return ArchitectureSpec(8, 8, 2, SMALL_SHARED, SMALL_PATH).validate()


@pytest.fixture
def small_params(small_arch):
    return init_network(small_arch, 0)


@pytest.fixture
def small_config():
    return TrainConfig(max_len=8, embed_dim=8, shared_filters=SMALL_SHARED, path_filters=SMALL_PATH, epochs=3,
                       batch_size=5, t_ramp=2, verbose=0, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_corpus():
    return synthetic_corpus({'alpha': (6, 6), 'beta': (4, 4)}, seed=5)


@pytest.fixture
def tiny_table():
    return synthetic_embeddings(8, seed=5)


@pytest.fixture
def tiny_split(tiny_corpus, tiny_table):
    return designate_labeled(encode_all(tiny_corpus, tiny_table, 8), 0.5, seed=3)
