import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from iscsc.optimizer import run_algorithm1
from iscsc.scenario import fast_scenario, reference_scenario, synthesize_channels

settings.register_profile(
    "iscsc",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("iscsc")


@functools.lru_cache(maxsize=None)
def solved(kind: str, power_dbm: float = 20.0, mode: str = "full", seed: int = 0, channel_model: str = "los"):
    """Solve a built-in scenario once per session and share the result across test files."""
    base = {"fast": fast_scenario, "reference": reference_scenario}[kind]
    cfg = base(power_budget_dbm=power_dbm, cu_channel_model=channel_model, seed=seed)
    channels = synthesize_channels(cfg, seed)
    solution, report = run_algorithm1(cfg, channels, mode=mode, seed=seed)
    return cfg, channels, solution, report


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def fast_run():
    return solved("fast")


@pytest.fixture(scope="session")
def reference_run():
    return solved("reference")


# one verdict line per acceptance criterion, printed after the test summary
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
