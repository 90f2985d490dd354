import numpy as np
import pytest

from leadr.numkit import Rng

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def verdict():
    """Record one acceptance line, then assert on it. ``passed=None`` records a skip."""

    def record(criterion, passed, detail=""):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        _ACCEPTANCE.append((criterion, status, detail))
        if passed is None:
            pytest.skip(f"{criterion}: {detail}")
        assert passed, f"{criterion}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{status}  {criterion}  {detail}")


def random_matrix(rng, rows, cols, scale=1.0):
    return scale * rng.normal((rows, cols))


def assert_bits_equal(a, b):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape
    assert a.tobytes() == b.tobytes()
