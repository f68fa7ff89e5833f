import numpy as np
import pytest

from hbncce import (
    CentralSpinParams,
    IsotopeConfig,
    LatticeSpec,
    generate_bath,
)
from hbncce.hyperfine_model import build_model_dataset


@pytest.fixture(scope="session")
def small_lattice():
    return LatticeSpec(radius_ang=7.0)


@pytest.fixture(scope="session")
def small_dataset(small_lattice):
    return build_model_dataset(small_lattice, coverage_radius_ang=8.0)


@pytest.fixture(scope="session")
def small_bath(small_lattice, small_dataset):
    """~150-spin 11B/15N bath; enough structure for engine tests."""
    iso = IsotopeConfig(boron_isotope="B11", nitrogen_isotope="N15", rng_seed=3)
    return generate_bath(small_lattice, iso, small_dataset)


@pytest.fixture(scope="session")
def central():
    return CentralSpinParams()  # D = 3470 MHz, E = 50 MHz, qubit (0, -1)


@pytest.fixture(scope="session")
def central_e0():
    return CentralSpinParams(e_mhz=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
