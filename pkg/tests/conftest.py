import sys
from pathlib import Path

import numpy as np
import pytest

from dsglm import Dataset, LinkSpec

TESTS = Path(__file__).resolve().parent
DATA = TESTS / "data"
sys.path.insert(0, str(TESTS))

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement summary to the acceptance report."""
    def put(text):
        record_property("detail", text)
    return put


@pytest.fixture
def logistic():
    return LinkSpec.logistic()


@pytest.fixture
def rows50():
    """A 50-row, 2-feature set with both classes at a moderate location."""
    rng = np.random.default_rng(11)
    X = rng.uniform(-1, 1, size=(50, 2))
    y = (rng.random(50) < 0.3).astype(int)
    return Dataset(X, y)
