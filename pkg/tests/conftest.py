import numpy as np
import pytest
from hypothesis import settings

from osvilab.envs import build_cliffwalk, build_maze, build_two_state, two_state_policy

settings.register_profile("ci", max_examples=50, deadline=None, derandomize=True)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def cliffwalk():
    return build_cliffwalk()


@pytest.fixture(scope="session")
def maze():
    return build_maze()


@pytest.fixture(scope="session")
def two_state():
    kern, accurate, inaccurate = build_two_state()
    return kern, accurate, inaccurate, two_state_policy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = []


@pytest.fixture
def criterion(capsys):
    """Record and print one acceptance verdict line: criterion(n, ok, detail)."""

    def _record(n, ok, detail=""):
        line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _CRITERIA.append((n, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA):
        terminalreporter.write_line(line)
