import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen.json").read_text())

# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


@pytest.fixture
def frozen():
    return FROZEN


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
