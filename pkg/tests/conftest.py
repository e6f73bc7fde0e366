"""Shared fixtures and the acceptance-criteria result registry.

Acceptance tests record their measurements before asserting, so the terminal
summary always carries one PASS/FAIL line per criterion even when an assert
trips.
"""

import numpy as np
import pytest

try:
    from hypothesis import settings

    settings.register_profile("suite", deadline=None, max_examples=100)
    settings.load_profile("suite")
except ImportError:  # pragma: no cover
    pass

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class AcceptanceLog:
    def record(self, criterion: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = (bool(passed), detail)

    def check(self, criterion: int, passed: bool, detail: str) -> None:
        """Record then assert, so the summary line survives a failure."""
        self.record(criterion, passed, detail)
        assert passed, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="session")
def acceptance() -> AcceptanceLog:
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[criterion]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {criterion} {verdict} {detail}")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
