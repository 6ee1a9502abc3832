import datetime as dt

import pytest

from sep.core import FactSummary, InputWindow, StockSymbol
from sep.llmio import ScriptedBackend

AAPL = StockSymbol.lookup("AAPL")
D0 = dt.date(2021, 3, 1)


def day(k: int) -> dt.date:
    return D0 + dt.timedelta(days=k)


def window(facts_per_day=(("Apple beat earnings",),) * 5, stock=AAPL, start=0) -> InputWindow:
    sums = tuple(FactSummary(stock, day(start + i), tuple(f), bool(f)) for i, f in enumerate(facts_per_day))
    return InputWindow(stock, day(start + len(sums)), sums)


class CountingMock(ScriptedBackend):
    """Scripted mock that also records the template of every call."""

    def __init__(self, script=None):
        super().__init__(script)
        self.calls: list[str] = []

    def complete(self, request):
        self.calls.append(request.template)
        return super().complete(request)


@pytest.fixture
def mock():
    return CountingMock()


# -- acceptance summary ----------------------------------------------------------

_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if marker:
        n, text = marker
        entry = _criteria.setdefault(n, [text, True])
        entry[1] = entry[1] and report.outcome == "passed"


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            item.user_properties.append(("criterion", tuple(m.args)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        text, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
