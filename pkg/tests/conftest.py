from __future__ import annotations

import numpy as np
import pytest

from squashloc.geometry import CourtGeometry, default_array


@pytest.fixture(scope="session")
def court() -> CourtGeometry:
    return CourtGeometry()


@pytest.fixture(scope="session")
def array(court):
    return default_array(court)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Print and record one PASS/FAIL line; returns ``ok`` so the caller can assert it."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
