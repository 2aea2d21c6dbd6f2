import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from krige.covariance import MaternParams, bessel_k, calibrate_theta, cov_matrix, matern_cov
from krige.errors import InvalidArgumentError
from krige.simulation import MATERN_PAIRS


def test_bessel_k_reference_value():
    assert bessel_k(1.0, 1.0) == pytest.approx(0.6019072301972346, rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        bessel_k(1.0, 0.0)


def test_matern_half_is_exponential():
    params = MaternParams(nu=0.5, rho=2.0, theta=0.3)
    d = np.array([0.0, 0.1, 0.5, 2.0])
    np.testing.assert_allclose(matern_cov(params, d), 2.0 * np.exp(-d / 0.3), rtol=1e-12)


def test_matern_three_halves_closed_form():
    params = MaternParams(nu=1.5, rho=1.0, theta=0.2)
    d = np.array([0.05, 0.3, 1.0])
    r = d / 0.2
    np.testing.assert_allclose(matern_cov(params, d), (1 + r) * np.exp(-r), rtol=1e-10)


def test_matern_scalar_and_zero_lag():
    params = MaternParams(nu=1.0, rho=1.7)
    assert matern_cov(params, 0.0) == 1.7
    assert isinstance(matern_cov(params, 0.2), float)
    with pytest.raises(InvalidArgumentError):
        matern_cov(params, -1.0)


@settings(deadline=None, max_examples=30)
@given(
    st.sampled_from([0.5, 1.0, 1.5, 2.0]),
    st.floats(min_value=0.01, max_value=1.0),
    st.floats(min_value=1e-9, max_value=3.0),
)
def test_matern_bounded_by_sill(nu, theta, d):
    value = matern_cov(MaternParams(nu=nu, rho=1.0, theta=theta), d)
    assert 0.0 <= value <= 1.0


def test_matern_params_validation():
    with pytest.raises(InvalidArgumentError):
        MaternParams(nu=0.0)
    with pytest.raises(InvalidArgumentError):
        MaternParams(nu=1.0, theta=-1.0)
    with pytest.raises(InvalidArgumentError):
        MaternParams(nu=1.0, rho=-0.5)


def test_cov_matrix_symmetric_with_sill_diagonal(rng):
    pts = rng.uniform(size=(25, 2))
    cov = cov_matrix(MaternParams(nu=1.0, rho=1.3, theta=0.137), pts)
    np.testing.assert_array_equal(cov, cov.T)
    np.testing.assert_allclose(np.diag(cov), 1.3)
    assert np.linalg.eigvalsh(cov).min() > -1e-10
    assert cov_matrix(MaternParams(nu=1.0), np.zeros((0, 2))).shape == (0, 0)


def test_cov_matrix_cross_shape(rng):
    cov = cov_matrix(MaternParams(nu=1.0), rng.uniform(size=(4, 2)), rng.uniform(size=(7, 2)))
    assert cov.shape == (4, 7)


def test_calibrate_theta_exponential_closed_form():
    assert calibrate_theta(0.5) == pytest.approx((1.0 / 3.0) / math.log(5.0), rel=1e-10)


@pytest.mark.parametrize("nu, theta", MATERN_PAIRS)
def test_calibrate_theta_matches_design_ranges(nu, theta):
    assert calibrate_theta(nu) == pytest.approx(theta, abs=5e-3)


@pytest.mark.parametrize("nu, theta", MATERN_PAIRS)
def test_design_ranges_give_target_correlation(nu, theta):
    assert 0.19 <= matern_cov(MaternParams(nu=nu, rho=1.0, theta=theta), 1.0 / 3.0) <= 0.21


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
def test_calibrate_theta_increases_with_target(nu):
    thetas = [calibrate_theta(nu, target_corr=c) for c in (0.05, 0.2, 0.5, 0.9)]
    assert thetas == sorted(thetas)
    assert len(set(thetas)) == 4


def test_calibrate_theta_hits_target():
    theta = calibrate_theta(1.0)
    assert matern_cov(MaternParams(nu=1.0, theta=theta), 1.0 / 3.0) == pytest.approx(0.2, abs=1e-10)
