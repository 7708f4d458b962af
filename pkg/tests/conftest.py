import pytest

from slkd.config import NetConfig
from slkd.data import DatasetManifest, materialize

TOY = NetConfig(levels=2, blocks=(1, 1), base_dim=4, unified_dim=4)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    m = DatasetManifest(str(tmp_path_factory.mktemp("tiny")), count=6, size=(16, 16), seed=3, holdout=0.34)
    materialize(m)
    return m
