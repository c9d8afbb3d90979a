from __future__ import annotations

import sys
from datetime import datetime, timedelta, timezone

import pytest

from talkattack.analytics import ScoredComment
from talkattack.corpus import Comment

T0 = datetime(2015, 3, 1, tzinfo=timezone.utc)

_acceptance: list[tuple[str, str]] = []


def scored(page: str, idx: int, author: str, attack: bool, *, registered: bool = True,
           hours: float | None = None, namespace: str = "user_talk", text: str = "x",
           score: float | None = None) -> ScoredComment:
    ts = T0 + timedelta(hours=idx if hours is None else hours)
    c = Comment(f"{page}:{idx}", page, namespace, ts, author, registered, text, text)
    s = (0.9 if attack else 0.1) if score is None else score
    return ScoredComment(c, s, attack, 0.5)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _acceptance.append((n, status))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n, status in sorted(_acceptance, key=lambda x: x[0]):
        terminalreporter.write_line(f"criterion {n:>2}: {status}")
