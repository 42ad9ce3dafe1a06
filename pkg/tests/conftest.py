import json
import os

import numpy as np
import pytest

from cocyclelab.flows import VectorFieldSpec
from cocyclelab.sections import CrossSection, attractor_point, sample_orbit

HERE = os.path.dirname(__file__)

_ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record_criterion():
    """Register one pass/fail line for the end-of-run acceptance summary."""

    def rec(n, ok, detail):
        _ACCEPTANCE.append((n, bool(ok), detail))
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return rec


@pytest.fixture(scope="session")
def frozen():
    with open(os.path.join(HERE, "oracles", "frozen.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def lorenz():
    return VectorFieldSpec.lorenz()


@pytest.fixture(scope="session")
def section(lorenz):
    return CrossSection.lorenz_default(lorenz)


@pytest.fixture(scope="session")
def start(lorenz, section):
    return attractor_point(lorenz, section)


@pytest.fixture(scope="session")
def orbit(lorenz, section, start):
    """1000 consecutive returns on the attractor."""
    return sample_orbit(lorenz, section, start, 1000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
