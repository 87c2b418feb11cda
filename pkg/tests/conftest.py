import numpy as np
import pytest

from tumorseg.configs import NetConfig
from tumorseg.network import network_layout
from tumorseg.weights_io import WeightStore, initialize_layout


def toy_single_config(**overrides):
    """Small 4-scale net that still exercises every structural path."""
    base = dict(
        stem_width=8,
        branch_widths=(8, 16, 32, 64),
        num_bases=8,
        em_iterations=2,
    )
    base.update(overrides)
    return NetConfig(**base)


def toy_cascade_configs():
    stage1 = toy_single_config(ema_enabled=False, width_multiplier=0.5)
    stage2 = toy_single_config(in_channels=7)
    return (stage1, stage2)


def init_params(config, seed=0):
    return initialize_layout(network_layout(config), seed)


def init_store(config, seed=0):
    return WeightStore(params=init_params(config, seed), seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, shown after the run so pass/fail status
# survives pytest's output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
