import numpy as np
import pytest
import torch

from ecgad.model import ModelConfig, init_params

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_config() -> ModelConfig:
    # two encoder stages -> stride 4
    return ModelConfig(global_len=256, beat_len=64, widths=(8, 16), d_k=16, mlp_hidden=32)


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return init_params(tiny_config, seed=123)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(2024)
