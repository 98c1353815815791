import pytest

from moadnet.benchmark import BENCHMARK_CONFIG
from moadnet.data import SyntheticSpec, generate_synthetic, load_dataset


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    spec = SyntheticSpec(n_slides=24, n_min=8, n_max=20, seed=11)
    return generate_synthetic(tmp_path_factory.mktemp("tiny"), spec)


@pytest.fixture
def tiny(tiny_root):
    return load_dataset(tiny_root)


@pytest.fixture(scope="session")
def tiny_survival_root(tmp_path_factory):
    spec = SyntheticSpec(n_slides=40, n_min=8, n_max=20, seed=12, task="survival")
    return generate_synthetic(tmp_path_factory.mktemp("tiny_surv"), spec)


@pytest.fixture
def fast_config():
    return BENCHMARK_CONFIG.replace(epochs=3)
