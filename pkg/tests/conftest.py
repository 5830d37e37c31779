import time
from contextlib import contextmanager

import pytest

_RESULTS: dict[int, str] = {}


class _Record:
    def __init__(self) -> None:
        self.detail = ""


@pytest.fixture
def criterion():
    """Time an acceptance criterion and record one PASS/FAIL line for it.

    Exceeding ``budget_s`` fails the criterion even if its checks passed.
    """

    @contextmanager
    def run(number: int, title: str, budget_s: float | None = None):
        rec = _Record()
        t0 = time.perf_counter()
        try:
            yield rec
        except BaseException as exc:
            elapsed = time.perf_counter() - t0
            _RESULTS[number] = f"criterion {number} FAIL  {title} ({elapsed:.2f}s) {rec.detail} :: {exc!s:.200}"
            raise
        elapsed = time.perf_counter() - t0
        if budget_s is not None and elapsed > budget_s:
            _RESULTS[number] = f"criterion {number} FAIL  {title} ({elapsed:.2f}s > {budget_s}s budget) {rec.detail}"
            raise AssertionError(f"criterion {number} took {elapsed:.2f}s, budget {budget_s}s")
        budget = f" / {budget_s:g}s" if budget_s is not None else ""
        _RESULTS[number] = f"criterion {number} PASS  {title} ({elapsed:.2f}s{budget}) {rec.detail}"

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[n])
