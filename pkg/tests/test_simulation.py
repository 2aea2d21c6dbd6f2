import numpy as np
import pytest
from scipy import stats

from krige.covariance import MaternParams, cov_matrix
from krige.errors import CapabilityError, InvalidArgumentError
from krige.simulation import (
    DESK_BANDWIDTHS,
    DESK_REPLICATES,
    PAPER_BANDWIDTHS,
    PAPER_REPLICATES,
    ExperimentCell,
    Scale,
    SimDesign,
    default_replicates,
    make_rng,
    paper_design_cells,
    sample_grf,
    simulate_field,
    standard_normal,
    unit_grid,
)

MATERN = MaternParams(nu=1.0, rho=1.0, theta=0.137)


def test_unit_grid_order():
    grid = unit_grid(3)
    assert grid.shape == (9, 2)
    np.testing.assert_allclose(grid[:3], [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(grid[-1], [1.0, 1.0])


def test_standard_normal_is_reproducible_and_normal():
    a = standard_normal(make_rng(3), 20000)
    b = standard_normal(make_rng(3), 20000)
    np.testing.assert_array_equal(a, b)
    assert abs(a.mean()) < 0.05
    assert abs(a.std() - 1.0) < 0.05
    assert np.all(np.isfinite(a))


def test_make_rng_rejects_negative_seed():
    with pytest.raises(InvalidArgumentError):
        make_rng(-1)
    rng = np.random.default_rng(0)
    assert make_rng(rng) is rng


def test_simulate_field_deterministic():
    design = SimDesign(grid_side=15, n_obs=40, matern=MATERN, sigma2_noise=0.25, seed=7)
    first, second = simulate_field(design), simulate_field(design)
    np.testing.assert_array_equal(first.truth, second.truth)
    np.testing.assert_array_equal(first.values, second.values)
    np.testing.assert_array_equal(first.obs_index, second.obs_index)
    other = simulate_field(SimDesign(grid_side=15, n_obs=40, matern=MATERN, sigma2_noise=0.25, seed=8))
    assert not np.allclose(first.truth, other.truth)


def test_replicate_seeds_draw_distinct_observation_sets():
    base = 1000
    index_sets = {
        tuple(simulate_field(SimDesign(grid_side=10, n_obs=20, matern=MATERN, seed=base + r)).obs_index)
        for r in range(100)
    }
    assert len(index_sets) == 100



def test_simulate_field_structure():
    field = simulate_field(SimDesign(grid_side=12, n_obs=30, matern=MATERN, seed=1))
    assert field.grid.shape == (144, 2)
    assert field.truth.shape == (144,)
    assert len(np.unique(field.obs_index)) == 30
    assert np.all(np.diff(field.obs_index) > 0)
    # no noise: observations are the truth
    np.testing.assert_array_equal(field.values, field.truth[field.obs_index])
    obs = field.observations
    np.testing.assert_array_equal(obs.locations, field.grid[field.obs_index])


def test_zero_sill_field():
    design = SimDesign(grid_side=5, n_obs=5, matern=MaternParams(nu=1.0, rho=0.0), seed=2)
    np.testing.assert_array_equal(simulate_field(design).truth, 0.0)


def test_grid_cap():
    design = SimDesign(grid_side=101, n_obs=10, matern=MATERN)
    with pytest.raises(CapabilityError):
        simulate_field(design)


def test_design_validation():
    with pytest.raises(InvalidArgumentError):
        SimDesign(grid_side=5, n_obs=0)
    with pytest.raises(InvalidArgumentError):
        SimDesign(grid_side=5, n_obs=26)
    with pytest.raises(InvalidArgumentError):
        SimDesign(grid_side=5, n_obs=5, sigma2_noise=-1.0)


def test_design_cells():
    desk = paper_design_cells(Scale.DESK)
    assert len(desk) == 4 * 4 * 3 * len(DESK_BANDWIDTHS)
    assert {c.grid_side for c in desk} == {50}
    assert {c.m for c in desk} == {23, 77, 175}
    paper = paper_design_cells("paper")
    assert len(paper) == 2 * 4 * 4 * 3 * 21
    assert PAPER_BANDWIDTHS[0] == 0.5 and PAPER_BANDWIDTHS[-1] == 2.5
    assert default_replicates(Scale.DESK) == DESK_REPLICATES
    assert default_replicates("paper") == PAPER_REPLICATES


def test_experiment_cell_design():
    cell = ExperimentCell(1.5, 0.110, 0.25, 50, 9, 1.5)
    design = cell.design(seed=4)
    assert design.matern == MaternParams(nu=1.5, rho=1.0, theta=0.110)
    assert design.sigma2_noise == 0.25 and design.seed == 4 and design.n_obs == 300
    assert cell.m == 77


@pytest.mark.slow
def test_sample_covariance_matches_matern():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.3, 0.2], [0.9, 0.9]])
    draws = np.array([sample_grf(pts, MATERN, seed) for seed in range(2000)])
    empirical = draws.T @ draws / draws.shape[0]
    expected = cov_matrix(MATERN, pts)
    np.testing.assert_allclose(empirical, expected, atol=0.1)
    assert empirical[0, 1] == pytest.approx(expected[0, 1], rel=0.05)


@pytest.mark.slow
def test_point_marginal_is_standard_normal():
    pts = np.array([[0.4, 0.6]])
    draws = np.array([sample_grf(pts, MATERN, seed)[0] for seed in range(2000)])
    assert stats.kstest(draws, "norm").pvalue > 0.01
