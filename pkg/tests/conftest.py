import numpy as np
import pytest

from dipcodec.geometry import HeadModel, build_grid, standard_electrodes
from dipcodec.leadfield import ForwardModel
from dipcodec.pipeline import Config


@pytest.fixture(scope="session")
def electrodes19():
    return standard_electrodes("10-20-19", 19)


@pytest.fixture(scope="session")
def head4():
    return HeadModel.four_shell()


@pytest.fixture(scope="session")
def model181(head4, electrodes19):
    return ForwardModel(head4, electrodes19, build_grid(head4, 181), 1e-3)


@pytest.fixture(scope="session")
def small_model(head4, electrodes19):
    return ForwardModel(head4, electrodes19, build_grid(head4, 33), 1e-3)


@pytest.fixture(scope="session")
def cfg19(electrodes19):
    return Config(electrodes19)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
