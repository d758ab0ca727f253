import contextlib
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Context manager recording one acceptance line: ``[PASS|FAIL] <n>. <title>: <detail>``.

    The body stores measurements in the yielded dict under ``"detail"``; any
    exception (including a failed assert) marks the criterion FAIL.
    """

    @contextlib.contextmanager
    def run(number: int, title: str):
        info = {"detail": ""}
        start = time.perf_counter()
        ok = False
        try:
            yield info
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {info['detail']} ({elapsed:.2f}s)"
            _ACCEPTANCE[number] = line
            print(line)

    return run


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
