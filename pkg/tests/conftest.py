import time

import pytest

CRITERIA: dict[int, str] = {}


class Criterion:
    """Records one acceptance line; the test body fills in ``detail``."""

    def __init__(self, number: int, name: str, budget_s: float):
        self.number, self.name, self.budget_s = number, name, budget_s
        self.detail = ""
        self.start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def finish(self, passed: bool) -> None:
        tag = "PASS" if passed else "FAIL"
        line = f"criterion {self.number} {tag}: {self.name} ({self.elapsed:.1f} s of {self.budget_s:.0f} s)"
        CRITERIA[self.number] = line + (f" {self.detail}" if self.detail else "")
        print(CRITERIA[self.number])


@pytest.fixture
def criterion(request):
    """Usage: ``c = criterion(3, "metric oracles", 5)``; the line is emitted
    as PASS when the test returns and FAIL when it raises."""
    made = []

    def make(number, name, budget_s):
        made.append(Criterion(number, name, budget_s))
        return made[-1]

    yield make
    for c in made:
        if c.number not in CRITERIA:
            c.finish(False)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
