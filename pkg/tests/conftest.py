import numpy as np
import pytest
from hypothesis import settings

from fiberlattice.fibermode import FiberSpec
from fiberlattice.fieldsim import BeamGeometry, LatticeField
from fiberlattice.quantities import mK
from fiberlattice.trapmodel import TrapConfig, TrapPotential, characterize_site

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fiber():
    return FiberSpec()


@pytest.fixture(scope="session")
def geom():
    return BeamGeometry()


@pytest.fixture(scope="session")
def lattice(fiber, geom):
    return LatticeField(geom, fiber)


@pytest.fixture(scope="session")
def potential05(lattice):
    return TrapPotential(lattice, TrapConfig(depth=mK(0.5)))


@pytest.fixture(scope="session")
def site05(potential05):
    return characterize_site(potential05, potential05.config, potential05.reference)


@pytest.fixture(scope="session")
def potential04_1um(fiber):
    g = BeamGeometry.for_period(1.0e-6)
    return TrapPotential(LatticeField(g, fiber), TrapConfig(depth=mK(0.4)))


@pytest.fixture(scope="session")
def site04_1um(potential04_1um):
    p = potential04_1um
    return characterize_site(p, p.config, p.reference)


@pytest.fixture(scope="session")
def spline04_1um(potential04_1um):
    from fiberlattice.dynamics import SplineLattice
    return SplineLattice(potential04_1um)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria lines, printed after the run regardless of capture
CRITERIA = []


@pytest.fixture(scope="session")
def criterion():
    def record(number, passed, text):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {text}"
        CRITERIA.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA):
            terminalreporter.write_line(line)
