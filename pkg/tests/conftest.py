"""Shared fixtures and the --runslow switch"""

import pytest

from shapeprior.core.dataset import DataConfig, build_splits
from shapeprior.core.network import NetConfig
from shapeprior.core.phantoms import OrganSpec, PhantomConfig
from shapeprior.core.training import TrainConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training and ablation tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_phantom_config() -> PhantomConfig:
    """16 x 16 phantoms with two organ classes"""
    return PhantomConfig(
        height=16,
        width=16,
        organs=(
            OrganSpec("big", 20, 50, 0.6, 0.7),
            OrganSpec("dot", 4, 12, 0.9, 0.95),
        ),
        noise_std=0.02,
    )


def tiny_net_config() -> NetConfig:
    return NetConfig(depth=1, base_channels=2, num_classes=3)


def tiny_train_config(**overrides) -> TrainConfig:
    values = dict(max_epochs=2, patience=5, batch_size=2, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def tiny_splits():
    data = DataConfig(train_count=4, val_count=2, test_count=3, train_label_noise=0.2)
    return build_splits(11, data, tiny_phantom_config())
