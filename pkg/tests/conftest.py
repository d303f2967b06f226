import numpy as np
import pytest

from aegru.data import SynthConfig, generate_synthetic
from aegru.model import ModelConfig, init_params

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_recording():
    return generate_synthetic(SynthConfig(channel_count=6, duration_samples=800, seed=3))


@pytest.fixture
def toy_params():
    """Randomised toy network with non-trivial biases and bn state."""
    cfg = ModelConfig(c_i=3, c_f=4, c_h=4, c_sigma=5)
    params = init_params(cfg, seed=11)
    gen = np.random.default_rng(5)
    for name in params:
        if name == "bn.running_var":
            params[name] = gen.uniform(0.5, 2.0, params[name].shape)
        elif not name.endswith(".weight") and not name.startswith("gru.w_"):
            params[name] = gen.uniform(-0.5, 0.5, params[name].shape)
    return params
