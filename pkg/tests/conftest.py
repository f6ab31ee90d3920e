import numpy as np
import pytest

from memhjb.kernel import HistoryState
from memhjb.problems import make_problem


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def empty_past():
    """x = 1 with a zero history on [0, 10]."""
    return HistoryState.from_function(np.array([1.0]), 0.0, 0.05, 10.0)


@pytest.fixture(params=["linear_memory", "uncontrolled_lq", "controlled_memory_lq"])
def smoke_problem(request):
    return make_problem(request.param)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""

    def _report(number: int, title: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.append(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        print(_ACCEPTANCE[-1])
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
