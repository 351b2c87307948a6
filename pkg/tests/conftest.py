from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from tzpc.config import load_config
from tzpc.pipeline import stage_generate, stage_learn, stage_offline, stage_reach, stage_simulate

# lines printed after the run by the acceptance suite
CRITERIA_REPORT: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_REPORT, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ex1_cfg():
    return load_config("example1_double_integrator")


@pytest.fixture(scope="session")
def ex2_cfg():
    return load_config("example2_building")


@pytest.fixture(scope="session")
def val_cfg():
    return load_config("validation_dense")


@pytest.fixture(scope="session")
def val_pipeline(val_cfg, tmp_path_factory):
    """Every stage of the validation scenario, run once per session."""
    out = tmp_path_factory.mktemp("validation")
    stage_generate(val_cfg, out)
    ms, delta = stage_learn(val_cfg, out)
    bundle = stage_offline(val_cfg, out)
    logs = stage_simulate(val_cfg, out)
    reach = stage_reach(val_cfg, out)
    return SimpleNamespace(out=out, cfg=val_cfg, ms=ms, delta=delta, bundle=bundle, logs=logs, reach=reach)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
