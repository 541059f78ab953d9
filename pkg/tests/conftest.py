import pytest

# acceptance tests append (label, passed, detail) here; printed after the run
ACCEPTANCE_RESULTS = []


def record(label, passed, detail=""):
    ACCEPTANCE_RESULTS.append((label, bool(passed), detail))
    return passed


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}  {detail}")
