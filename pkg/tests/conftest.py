import json
from pathlib import Path

import pytest

from fracminimax._backend import HAVE_NUMBA, backend, use_backend

ORACLES = json.loads((Path(__file__).parent / "oracles" / "oracles.json").read_text())


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(params=["numpy", "numba"] if HAVE_NUMBA else ["numpy"])
def each_backend(request):
    prev = use_backend(request.param)
    yield request.param
    use_backend(prev)


@pytest.fixture(autouse=True)
def _restore_backend():
    prev = backend()
    yield
    use_backend(prev)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary."""

    def record(number, passed, detail):
        _CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
