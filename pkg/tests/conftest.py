import numpy as np
import pytest

from controller.proofchain import DatasetProvider, build_proof
from controller.tinytrain import gen_dataset, train
from model.tinytrain import DatasetSpec, NoiseKind, NoiseModel, TrainConfig


@pytest.fixture(scope="session")
def dataset_spec() -> DatasetSpec:
    return DatasetSpec(classes=3, points_per_class=20, dim=2, seed=0)


@pytest.fixture(scope="session")
def dataset(dataset_spec):
    return gen_dataset(dataset_spec.seed, dataset_spec)


@pytest.fixture(scope="session")
def train_config() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=10, hidden=[4], k=3, lr=0.1, seed=1)


@pytest.fixture(scope="session")
def noise() -> NoiseModel:
    return NoiseModel(kind=NoiseKind.ISOTROPIC, scale=1e-3)


@pytest.fixture(scope="session")
def honest_run(train_config, dataset):
    return train(train_config, dataset)


@pytest.fixture(scope="session")
def honest_proof(honest_run, dataset, train_config):
    return build_proof(honest_run, dataset, train_config.k)


@pytest.fixture(scope="session")
def noisy_proof(train_config, dataset, noise):
    config = train_config.model_copy(update={"noise": noise, "noise_seed": 7})
    return build_proof(train(config, dataset), dataset, config.k)


@pytest.fixture
def provider(dataset) -> DatasetProvider:
    return DatasetProvider(dataset)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
