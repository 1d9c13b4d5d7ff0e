import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record the outcome of a numbered acceptance criterion for the terminal summary."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, title, passed, detail=""):
        store[number] = (title, bool(passed), detail)
        print(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        title, passed, detail = store[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
