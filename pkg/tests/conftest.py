import numpy as np
import pytest

from nn3a.model import ModelConfig, init_params

ACCEPTANCE_RESULTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(input_set="EX", num_layers=2, hidden_dim=8, projection_dim=4,
                       memory_order=3, num_bins=4)


def random_params(cfg, seed=0, bias_scale=0.1):
    """Init plus nonzero biases and feature statistics so every path is exercised."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    for name, value in params.items():
        if name.endswith("bias"):
            params[name] = rng.normal(0.0, bias_scale, value.shape)
    params["input.weight"] *= 10.0
    params["feature.mean"] = rng.normal(0.0, 0.5, cfg.feature_dim)
    params["feature.scale"] = rng.uniform(0.5, 2.0, cfg.feature_dim)
    return params


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
