import pytest

from kinetic_einstein.kinetic import KineticModel, TorusGrid
from kinetic_einstein.lattice import DispersionLaw
from kinetic_einstein.reservoir import FormFactor, ReservoirParams, SpectralDensity


def make_params(beta=1.0, d_res=3, profile="gaussian", sigma=1.0):
    return ReservoirParams(beta=beta, form_factor=FormFactor(profile, sigma, d_res))


def make_kinetic(N=64, beta=1.0, d=1, d_res=3):
    return KineticModel(TorusGrid(d, N), DispersionLaw.laplacian(d), psd=SpectralDensity(make_params(beta, d_res)))


@pytest.fixture(scope="session")
def params3():
    return make_params()


@pytest.fixture(scope="session")
def params4():
    return make_params(d_res=4)


@pytest.fixture(scope="session")
def kin64():
    return make_kinetic(64)
