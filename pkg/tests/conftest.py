import numpy as np
import pytest

from spikingmoe.model import ModelConfig
from spikingmoe.tensor import default_dtype


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


def tiny_config(**kw) -> ModelConfig:
    base = dict(layers=1, embed_dim=16, heads=2, num_experts=4, topk=2, timesteps=2, num_classes=3,
                image_size=8, patch_size=4, in_channels=3)
    base.update(kw)
    return ModelConfig(**base)


def random_spikes(rng, shape, p=0.3):
    return (rng.random(shape) < p).astype(np.float32)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
