# tests/conftest.py

import numpy as np
import pytest

from app.schemas.network import NetworkConfig
from app.schemas.training import TrainConfig
from app.services import dataset_service


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def tiny_network() -> NetworkConfig:
    """两层、通道 [4, 8]，用于梯度检查和快速训练"""
    return NetworkConfig(levels=2, channels=[4, 8], ratio=2)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return TrainConfig(steps=3, support_k=2, image_size=16, seed=0, log_every=1)


@pytest.fixture(scope="session")
def small_dataset():
    """2 个域各 8 个样本，16×16，按 80/20 分层划分"""
    return dataset_service.synth_dataset(n=16, domains=2, size=16, seed=0)
