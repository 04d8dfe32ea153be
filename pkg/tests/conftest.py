from __future__ import annotations

import pytest

from iccflow.surrogate import BankConfig, GpSettings, build_bank

# (criterion number, PASS/FAIL line) collected by the acceptance tests
ACCEPTANCE_LINES: list[tuple[int, str]] = []


@pytest.fixture(scope="session")
def tiny_config() -> BankConfig:
    """Depth-2 bank with 16 training and 3 held-out points; builds in seconds."""
    return BankConfig(sample_count=16, heldout_count=3, depth=2, p=3, gp=GpSettings(n_starts=8))


@pytest.fixture(scope="session")
def tiny_bank(tmp_path_factory, tiny_config):
    d = tmp_path_factory.mktemp("tiny_bank")
    return build_bank(tiny_config, d), d


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
