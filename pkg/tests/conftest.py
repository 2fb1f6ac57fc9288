import numpy as np
import pytest

from mfarb.model import GameConfig, TypeLaw
from mfarb.vsm import VsmConfig, vsm_coefficients

# acceptance outcomes: criterion number -> (passed, detail)
ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d} {title}: {detail}")


@pytest.fixture
def vsm2():
    x0 = (100.0, 100.0)
    return x0, vsm_coefficients(VsmConfig(n=2, x0=x0))


@pytest.fixture
def game2():
    return GameConfig(0.5, 1.0, (100.0, 100.0), TypeLaw.homogeneous(0.0, 100.0), e_c_override=0.3, dt=1 / 64)


@pytest.fixture
def rs():
    return np.random.default_rng(12345)
