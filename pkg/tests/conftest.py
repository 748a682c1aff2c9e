import numpy as np
import pytest

from sipgains import zoo


@pytest.fixture(scope="session")
def toy2d():
    return zoo.toy2d_spec()


@pytest.fixture(scope="session")
def quad():
    return zoo.quadrotor_spec("two_step")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def singleton_toy2d_spec():
    """Planar toy with every uncertainty pinned to zero and a matching history."""
    from sipgains import Box, UncertaintySpec
    return zoo.toy2d_spec().replace(
        uncertainty=UncertaintySpec(w_set=Box([0, 0], [0, 0]), v_set=Box([0, 0], [0, 0])),
        Y0=np.array([[0.0, 0.0], [1.0, 1.0]]))


@pytest.fixture(scope="session")
def singleton2d():
    return singleton_toy2d_spec()


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    def record(n, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
