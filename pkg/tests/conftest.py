import numpy as np
import pytest

from jointvit.data import SynthSpec, synth_longtail
from jointvit.model import ViTConfig, init_params

TINY = ViTConfig(image_size=16, patch_size=4, embed_dim=16, depth=1, heads=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_params():
    return init_params(TINY, 0)


@pytest.fixture(scope="session")
def marker_dataset():
    return synth_longtail(SynthSpec(counts=(9, 30, 18), image_size=16, seed=0, marker=True))
