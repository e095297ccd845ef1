import contextlib
import time

import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_criteria: list[tuple[str, bool, float, str]] = []


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion's outcome."""

    @contextlib.contextmanager
    def record(name, limit_s=None):
        note = {}
        t0 = time.perf_counter()
        try:
            yield note
        except BaseException:
            _criteria.append((name, False, time.perf_counter() - t0, note.get("detail", "")))
            raise
        elapsed = time.perf_counter() - t0
        ok = limit_s is None or elapsed < limit_s
        detail = note.get("detail", "")
        if not ok:
            detail = f"{detail} runtime {elapsed:.1f}s exceeds {limit_s}s".strip()
        _criteria.append((name, ok, elapsed, detail))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, elapsed, detail in _criteria:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({elapsed:.1f}s)  {detail}")
