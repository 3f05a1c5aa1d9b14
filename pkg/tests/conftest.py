# tests/conftest.py
"""Shared fixtures for the test suite"""

import pytest

from lab.experiment import (
    ExperimentConfig, ModelConfig, OptimizerConfig,
    PruningConfig, ScheduleConfig, TaskConfig,
)
from lab.network import MLPSpec, init_state
from lab.numerics import RngState
from lab.utils.datasets import gen_synthetic_task


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run slow experiments')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_output_root(tmp_path, monkeypatch):
    """Keep the registry and run directories inside the test's tmp_path"""
    from config import settings
    root = tmp_path / 'runs'
    monkeypatch.setattr(settings, 'OUTPUT_ROOT', root)
    monkeypatch.setattr(settings, 'DATABASE_URL', None)
    return root


@pytest.fixture
def small_spec():
    return MLPSpec(layer_widths=(6, 8, 8, 3), use_batchnorm=(True, True))


@pytest.fixture
def small_state(small_spec):
    return init_state(small_spec, RngState(7))


@pytest.fixture
def small_task():
    return gen_synthetic_task(classes=3, dim=6, n_train=96, n_test=48, separation=4.0, rng=RngState(3))


@pytest.fixture
def tiny_config():
    """A pruning run that finishes in well under a second"""
    return ExperimentConfig(
        task=TaskConfig(classes=3, dim=6, n_train=64, n_test=32, separation=4.0, seed=1),
        model=ModelConfig(hidden=(8, 8)),
        schedule=ScheduleConfig(base_lr=0.05, warmup_epochs=1, epochs=3),
        optimizer=OptimizerConfig(batch_size=16),
        pruning=PruningConfig(levels=3, keep_fraction=0.7, rewind_epoch=1),
    )
