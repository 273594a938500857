from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from morseflow import _backend
from morseflow.state import SystemState

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(params=sorted(_backend.available_backends()))
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    monkeypatch.setattr(_backend, "kernels", _backend.available_backends()[request.param])
    return request.param


def random_state(N: int, rng: np.random.Generator, spread: float = 3.0) -> SystemState:
    while True:
        x = np.sort(rng.uniform(-spread, spread, N + 1))
        y = np.sort(rng.uniform(-spread, spread, N + 1))
        if np.min(np.diff(x)) > 0 and np.min(np.diff(y)) > 0:
            return SystemState.from_positions(x, y)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


# ------------------------------------------------------------ acceptance log

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion outcome for the end-of-run summary."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        request.config.stash[_ACCEPTANCE].append((number, title, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {title}: {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(_ACCEPTANCE, [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(rows, key=lambda r: r[0]):
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}: {detail}"
        )
