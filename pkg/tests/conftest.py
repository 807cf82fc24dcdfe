import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from grfpinn import simgen

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): one acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = dict(report.user_properties).get("criterion")
    if name is None:
        return
    status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
    detail = dict(report.user_properties).get("detail", "")
    _ACCEPTANCE[name] = f"{status}  {name}" + (f"  ({detail})" if detail else "")


def pytest_runtest_setup(item):
    m = item.get_closest_marker("acceptance")
    if m is not None:
        item.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE.values():
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_splits():
    """Three short sessions per split: fast, but every mode and preset present."""
    cfg = simgen.DatasetConfig(seed=3, session_seconds=4.0, sessions={"train": 1, "val": 1, "test": 1})
    return simgen.build_splits(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
