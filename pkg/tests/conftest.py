import numpy as np
import pytest
import torch

from zoomloc.geo import PyramidConfig
from zoomloc.world import WorldConfig, generate_world


@pytest.fixture(scope="session")
def default_pyramid():
    return PyramidConfig()


@pytest.fixture(scope="session")
def desk_pyramid():
    return PyramidConfig(num_steps=3, aoi_side=2000.0)


@pytest.fixture(scope="session")
def desk_world():
    return generate_world(7, WorldConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
