import os
import pytest

from feddef.data import LabeledDataset, make_synthetic
from feddef.nn import ModelArchitecture, ParameterSet, init_params
from feddef.nn.profiles import fast_mlp

SMALL_SHAPE = (1, 8, 8)


@pytest.fixture
def small_arch() -> ModelArchitecture:
    return fast_mlp(SMALL_SHAPE, 10)


@pytest.fixture
def small_params(small_arch: ModelArchitecture) -> ParameterSet:
    return init_params(small_arch, 1)


@pytest.fixture
def small_data() -> LabeledDataset:
    return make_synthetic(200, SMALL_SHAPE, 10, seed=3)


@pytest.fixture
def mnist_dir() -> str:
    data_dir = os.environ.get('FEDDEF_DATA_DIR')
    if not data_dir:
        pytest.skip("FEDDEF_DATA_DIR not set")
    return data_dir
