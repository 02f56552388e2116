import json
from pathlib import Path

import numpy as np
import pytest

from relaycap.measures import EmpiricalMeasure
from relaycap.model import DomainSpec, SpatialLaw, TimeLaw

GOLDEN = Path(__file__).parent / "golden"


def load_golden(name):
    return json.loads((GOLDEN / f"{name}.json").read_text())


def one_atom(s=0.2, t=0.5, u=0.1, w=0.3, x=0.5):
    return EmpiricalMeasure([s], [t], [[x]], [u], [w], 1.0, ((0.0, 1.0),))


@pytest.fixture
def unit_domain():
    return DomainSpec(((0.0, 1.0),), 1.0)


@pytest.fixture
def uniform_laws(unit_domain):
    return SpatialLaw.uniform(unit_domain), TimeLaw("independent-uniform-pair", 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
