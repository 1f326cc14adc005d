import numpy as np
import pytest

from finslerlab import presets
from finslerlab.distances import DistanceOracle
from finslerlab.reconstruct import ForwardEngine


@pytest.fixture(scope="session")
def disk():
    return presets.unit_disk()


@pytest.fixture(scope="session")
def flat():
    return presets.flat_norm()


@pytest.fixture(scope="session")
def randers():
    return presets.randers_norm()


@pytest.fixture(scope="session")
def bump():
    return presets.bump_norm()


@pytest.fixture(scope="session")
def flat_oracle(flat, disk):
    orc = DistanceOracle(flat, disk, h=disk.diameter / 100, k=3, boundary_count=64)
    orc.calibrate()
    return orc


@pytest.fixture(scope="session")
def randers_oracle(randers, disk):
    return DistanceOracle(randers, disk, h=disk.diameter / 100, k=3, boundary_count=64)


@pytest.fixture(scope="session")
def bump_oracle(bump, disk):
    return DistanceOracle(bump, disk, h=disk.diameter / 100, k=3, boundary_count=64)


@pytest.fixture(scope="session")
def flat_engine(flat, disk, flat_oracle):
    return ForwardEngine(flat, disk, flat_oracle)


@pytest.fixture(scope="session")
def randers_engine(randers, disk, randers_oracle):
    return ForwardEngine(randers, disk, randers_oracle)


@pytest.fixture(scope="session")
def bump_engine(bump, disk, bump_oracle):
    return ForwardEngine(bump, disk, bump_oracle)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
