"""Shared fixtures: cheap converged solutions reused across test files."""

import numpy as np
import pytest

from impulseopt.bcs import Variant, solve_variant
from impulseopt.scenarios import load_initial_data


@pytest.fixture(scope="session")
def one_impulse_free_data_I():
    """Converged free-instant one-impulse solution on initial data I."""
    scenario = load_initial_data("I")
    sol, pmap = solve_variant(Variant.ONE_IMPULSE_FREE, scenario,
                              {"th": 700.0}, tol=1e-9)
    return sol, pmap, scenario


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)
