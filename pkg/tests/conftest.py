from pathlib import Path

import pytest

from tooldse.profiles import builtin_catalog

FIXTURES = Path(__file__).parent / "fixtures"
DEMO_LANDSCAPE = Path(__file__).parents[1] / "src" / "tooldse" / "data" / "demo_landscape_ra.json"

# Tools varied in the 8-tool subset study (RA mask; AI drops the inter tools).
SUBSET8 = ["ISP", "CCLM", "DQ", "MTS", "ALF", "SAO", "AFFINE", "GPM"]


@pytest.fixture(scope="session")
def catalog():
    return builtin_catalog()


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# Acceptance criteria append (number, passed, detail) here; printed at the end.
ACCEPTANCE_LINES: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
