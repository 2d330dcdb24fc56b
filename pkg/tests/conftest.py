import pytest

from fractalwave.measure import builtin_measure

BUILTINS = [("bernoulli", None), ("bernoulli", 0.5), ("golden", None), ("cantor", None)]

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(params=BUILTINS, ids=lambda b: f"{b[0]}-{b[1]}")
def any_builtin(request):
    return builtin_measure(*request.param)


@pytest.fixture(scope="session")
def golden():
    return builtin_measure("golden")


@pytest.fixture(scope="session")
def cantor():
    return builtin_measure("cantor")


@pytest.fixture(scope="session")
def lebesgue():
    return builtin_measure("bernoulli", 0.5)


@pytest.fixture(scope="session")
def weighted():
    return builtin_measure("bernoulli")


@pytest.fixture
def report_line():
    """Record one acceptance verdict line; all lines are echoed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
