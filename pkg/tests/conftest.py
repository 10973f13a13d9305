import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from nochainpos import ledger

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TESTS = Path(__file__).parent


@pytest.fixture
def fixtures_dir() -> Path:
    return TESTS / "fixtures"


def pytest_terminal_summary(terminalreporter):
    terminalreporter.write_line(f"conservation checks this session: {ledger.conservation_checks}")
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance.RESULTS):
            terminalreporter.write_line(acceptance.RESULTS[n])
