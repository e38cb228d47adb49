import numpy as np
import pytest

from stealthpatch.models import ToyDepthModel
from stealthpatch.synthetic import synthetic_scenes

# criterion name -> (passed, detail); filled by the acceptance tests
ACCEPTANCE = {}


def record(name, passed, detail=""):
    ACCEPTANCE[name] = (bool(passed), detail)
    print(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture(scope="session")
def toy():
    return ToyDepthModel(seed=0)


@pytest.fixture(scope="session")
def scenes():
    return synthetic_scenes(4, (128, 128), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
