import numpy as np
import pytest

from synlab.experiment import TestbedConfig, build_data, model_config_for
from synlab.training import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    tb = TestbedConfig.preset("in_domain", n_real=240, n_test=200)
    return tb, build_data(tb, 0)


@pytest.fixture
def quick_train():
    return TrainConfig(epochs_total=4, warmup_epochs=2, lr_decay_interval=2, batch_size=32)


@pytest.fixture
def small_model(small_data):
    tb, data = small_data
    return model_config_for(tb, (16,), 0, data.real_train)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        ok, detail = RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
