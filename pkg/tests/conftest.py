import re

import pytest
from hypothesis import settings

from espkit.miner import mine_tokens
from espkit.synth import gen_control_suite, gen_cutin_suite

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def cutin_suite():
    return gen_cutin_suite(50, seed=0)


@pytest.fixture(scope="session")
def control_suite():
    return gen_control_suite(50, seed=0)


@pytest.fixture(scope="session")
def mined_cutin(cutin_suite):
    return [mine_tokens(c.stream) for c in cutin_suite]


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        status = "PASS" if report.outcome == "passed" else "FAIL"
        prev = _ACCEPTANCE.get(n)
        if prev is None or prev[1] == "PASS":
            _ACCEPTANCE[n] = (m.group(2), status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, status = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} [{name}]: {status}")
