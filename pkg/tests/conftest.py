import numpy as np
import pytest

from solmanifold import RadialGrid, ground_state


@pytest.fixture(scope="session")
def spec_grid():
    """Reference spectral grid: fine dr, compact R (g lives at r <~ 10)."""
    return RadialGrid(R=20.0, n=1601)


@pytest.fixture(scope="session")
def S_ref(spec_grid):
    return ground_state(spec_grid)


@pytest.fixture(scope="session")
def mod_grid():
    """Work grid for modulation runs: budget R_obs + T <= R with T ~ 18."""
    return RadialGrid(R=60.0, n=1201, R_obs=20.0)


@pytest.fixture(scope="session")
def S_mod(mod_grid):
    return ground_state(mod_grid)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
