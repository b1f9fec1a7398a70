import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

MNIST_DIR = Path(os.environ.get("OCRM_DATA_DIR", Path(__file__).parent.parent / "data")) / "mnist"


@pytest.fixture(scope="session")
def mnist_dir():
    if not (MNIST_DIR / "train-labels-idx1-ubyte").exists() and not (
        MNIST_DIR / "train-labels-idx1-ubyte.gz"
    ).exists():
        pytest.skip(f"MNIST not found under {MNIST_DIR}")
    return MNIST_DIR


# criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'} - {detail}")
