import numpy as np
import pytest

from fptd.model import Gaussian, JumpDiffusionModel, PointMass


@pytest.fixture
def bm():
    return JumpDiffusionModel(0.0, 0.0)


@pytest.fixture
def gauss_model():
    return JumpDiffusionModel(0.0, 1.0, Gaussian(0.0, 1.0))


@pytest.fixture
def sn_model():
    return JumpDiffusionModel(1.0, 1.0, PointMass(-1.0))


def within(value, target, se, k=3.0):
    return abs(value - target) <= k * se


@pytest.fixture
def rng_np():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(label, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
