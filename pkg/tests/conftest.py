import sys

import numpy as np
import pytest
from hypothesis import settings

from qlbe import CollisionSystem, ConstantSWave, GasSpec, MassPair, MaxwellBoltzmann

settings.register_profile("qlbe", deadline=None, max_examples=40)
settings.load_profile("qlbe")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_system(model=None, m=1.0, M=2.0, beta=2.0, n_gas=1.0, drift=(0.0, 0.0, 0.0), **kw):
    masses = MassPair(m, M)
    if callable(model):
        model = model(masses)
    model = model if model is not None else ConstantSWave(0.3 + 0.2j)
    return CollisionSystem(masses, GasSpec(MaxwellBoltzmann(m, beta, drift), n_gas), model, **kw)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)
