"""
Gaussian random field simulation and the experiment design grid.

Random numbers come from a Philox counter-based generator. Standard normals
are drawn by inverse CDF from 53-bit uniforms rather than numpy's ziggurat,
so a seed gives the same field on every platform.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Union

import numpy as np
from scipy import special

from .covariance import MaternParams, cov_matrix
from .errors import CapabilityError, InvalidArgumentError, NotPositiveDefiniteError
from .geometry import ObservationSet, as_points, triangular_knot_count
from .linalg import cholesky

logger = logging.getLogger(__name__)

MAX_GRID_SIDE = 100
JITTER_START = 1e-10
JITTER_MAX = 1e-6

# (nu, theta) pairs with correlation 0.2 at distance 1/3
MATERN_PAIRS = ((0.5, 0.205), (1.0, 0.137), (1.5, 0.110), (2.0, 0.095))
NOISE_LEVELS = (0.0, 0.1, 0.25, 0.4)
X_DIVISORS = (5, 9, 13)
DESK_BANDWIDTHS = (0.5, 1.0, 1.5, 2.0, 2.5)
PAPER_BANDWIDTHS = tuple(round(0.5 + 0.1 * i, 1) for i in range(21))
DESK_REPLICATES = 20
PAPER_REPLICATES = 100
N_OBS = 300

Seed = Union[int, np.random.Generator]


def make_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if int(seed) < 0:
        raise InvalidArgumentError(f"seed must be >= 0, got {seed}")
    return np.random.Generator(np.random.Philox(int(seed)))


def standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normals by inverse CDF of 53-bit uniforms on (0, 1)."""
    bits = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return special.ndtri((bits.astype(float) + 0.5) / 2.0**53)


@dataclass(frozen=True)
class SimDesign:
    grid_side: int = 50
    n_obs: int = N_OBS
    matern: MaternParams = MaternParams(nu=1.0, rho=1.0, theta=0.137)
    sigma2_noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.grid_side < 2:
            raise InvalidArgumentError(f"grid side must be >= 2, got {self.grid_side}")
        if not 1 <= self.n_obs <= self.grid_side**2:
            raise InvalidArgumentError(
                f"n_obs must be in [1, {self.grid_side ** 2}], got {self.n_obs}"
            )
        if not (self.sigma2_noise >= 0 and math.isfinite(self.sigma2_noise)):
            raise InvalidArgumentError(f"noise variance must be >= 0, got {self.sigma2_noise}")


@dataclass(frozen=True, eq=False)
class SimulatedField:
    """Truth on a regular grid and noisy observations at a subset of it."""

    grid: np.ndarray
    truth: np.ndarray
    obs_index: np.ndarray
    values: np.ndarray

    @property
    def observations(self) -> ObservationSet:
        return ObservationSet(self.grid[self.obs_index], self.values)


def unit_grid(side: int) -> np.ndarray:
    """``side x side`` lattice over ``[0, 1]^2``, row-major with x varying fastest."""
    ticks = np.linspace(0.0, 1.0, side)
    xx, yy = np.meshgrid(ticks, ticks)
    return np.column_stack([xx.ravel(), yy.ravel()])


def sample_grf(locations, matern: MaternParams, seed: Seed) -> np.ndarray:
    """Draw a zero-mean Matérn field at ``locations`` by dense Cholesky.

    A diagonal jitter starting at ``1e-10 * rho`` is doubled until the
    factorization succeeds or ``1e-6 * rho`` is exceeded.
    """
    pts = as_points(locations)
    rng = make_rng(seed)
    z = standard_normal(rng, pts.shape[0])
    if matern.rho == 0 or pts.shape[0] == 0:
        return np.zeros(pts.shape[0])

    cov = cov_matrix(matern, pts)
    jitter = JITTER_START * matern.rho
    while True:
        try:
            factor = cholesky(cov + jitter * np.eye(pts.shape[0]))
            break
        except NotPositiveDefiniteError:
            if jitter * 2 > JITTER_MAX * matern.rho:
                raise
            jitter *= 2
            logger.debug("Cholesky retry with jitter %.3g", jitter)
    return factor.lower @ z


def simulate_field(design: SimDesign) -> SimulatedField:
    """Truth field on the grid, then observation indices, then noise."""
    if design.grid_side > MAX_GRID_SIDE:
        raise CapabilityError(
            f"grid side {design.grid_side} exceeds the desk-scale cap of {MAX_GRID_SIDE}"
        )
    rng = make_rng(design.seed)
    grid = unit_grid(design.grid_side)
    truth = sample_grf(grid, design.matern, rng)
    index = np.sort(rng.choice(grid.shape[0], size=design.n_obs, replace=False))
    noise = math.sqrt(design.sigma2_noise) * standard_normal(rng, design.n_obs)
    values = truth[index] + noise
    logger.debug(
        "simulated %dx%d field, %d observations, seed %d",
        design.grid_side, design.grid_side, design.n_obs, design.seed,
    )
    return SimulatedField(grid=grid, truth=truth, obs_index=index, values=values)


# -------------------------------------------------
# Experiment design
# -------------------------------------------------
class Scale(str, enum.Enum):
    DESK = "desk"
    PAPER = "paper"


@dataclass(frozen=True)
class ExperimentCell:
    """One (field, basis) combination of the simulation study."""

    nu: float
    theta: float
    sigma2: float
    grid_side: int
    x_divisor: int
    bandwidth_constant: float
    n_obs: int = N_OBS

    @property
    def m(self) -> int:
        return triangular_knot_count(self.x_divisor)

    def design(self, seed: int) -> SimDesign:
        return SimDesign(
            grid_side=self.grid_side,
            n_obs=self.n_obs,
            matern=MaternParams(nu=self.nu, rho=1.0, theta=self.theta),
            sigma2_noise=self.sigma2,
            seed=seed,
        )


def paper_design_cells(scale: Scale = Scale.DESK) -> List[ExperimentCell]:
    """The full (nu, theta) x sigma2 x knots x bandwidth cross for one replicate.

    ``DESK`` uses a 50 x 50 grid and five bandwidths; ``PAPER`` lists every
    bandwidth from 0.5 to 2.5 and both grids, 200 x 200 included, even though that
    grid exceeds the simulation cap.
    """
    scale = Scale(scale)
    if scale is Scale.DESK:
        grids, bandwidths = (50,), DESK_BANDWIDTHS
    else:
        grids, bandwidths = (50, 200), PAPER_BANDWIDTHS
    return [
        ExperimentCell(nu, theta, sigma2, grid, xdiv, b)
        for grid, (nu, theta), sigma2, xdiv, b in itertools.product(
            grids, MATERN_PAIRS, NOISE_LEVELS, X_DIVISORS, bandwidths
        )
    ]


def default_replicates(scale: Scale) -> int:
    return DESK_REPLICATES if Scale(scale) is Scale.DESK else PAPER_REPLICATES
