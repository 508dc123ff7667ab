import numpy as np
import pytest

from epsflow.grid import GridSpec, ScalarField
from epsflow.physics import PhysicalParams


@pytest.fixture
def unit_grid32():
    return GridSpec(32, 32)


@pytest.fixture
def unit_grid64():
    return GridSpec(64, 64)


@pytest.fixture
def params():
    return PhysicalParams()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def cos_pix(grid):
    X, _ = grid.cell_centers()
    return ScalarField(grid, np.cos(np.pi * X))


def cos_pix_cos_piy(grid, amplitude=1.0):
    X, Y = grid.cell_centers()
    return ScalarField(grid, amplitude * np.cos(np.pi * X) * np.cos(np.pi * Y))
