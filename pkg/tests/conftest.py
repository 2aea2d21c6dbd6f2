"""Shared fixtures and the ``--runslow`` switch."""

from __future__ import annotations

import numpy as np
import pytest

from krige.covariance import MaternParams
from krige.geometry import BasisConfig, ObservationSet, build_basis, triangular_knot_grid
from krige.simulation import SimDesign, simulate_field


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte Carlo tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def small_field():
    """A seeded 20x20 Matérn field with 120 noisy observations."""
    design = SimDesign(
        grid_side=20,
        n_obs=120,
        matern=MaternParams(nu=1.0, rho=1.0, theta=0.137),
        sigma2_noise=0.1,
        seed=11,
    )
    return simulate_field(design)


@pytest.fixture(scope="session")
def small_basis(small_field):
    knots = triangular_knot_grid(5)
    config = BasisConfig(1.5)
    s = build_basis(small_field.observations.locations, knots, config)
    return knots, config, s


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_obs():
    return ObservationSet(np.array([[0.1, 0.2], [0.5, 0.5], [0.9, 0.7], [0.3, 0.8]]), np.array([1.0, -0.5, 0.3, 2.0]))
