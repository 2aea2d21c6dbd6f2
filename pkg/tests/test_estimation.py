import math

import numpy as np
import pytest
from scipy import sparse

from krige.errors import InvalidArgumentError
from krige.estimation import (
    FitConfig,
    FitMethod,
    em_step_full,
    em_step_identity,
    fit,
    fit_em,
    fit_rbk,
)
from krige.geometry import BasisConfig, ObservationSet, build_basis, triangular_knot_grid
from krige.linalg import apply_qt, thin_qr
from krige.sre_model import FullK, NoiseSpec, ScaledK, full_loglik, reduce, reduced_loglik


def _dense_em_step(k, sigma2, s, y, v_delta, sigma2_eps=0.0):
    """The EM updates written with explicit n x n matrices."""
    n = y.shape[0]
    d = sigma2 * v_delta + sigma2_eps
    sigma_inv = np.linalg.inv(s @ k @ s.T + np.diag(d))
    u = k @ s.T @ sigma_inv @ y
    k_new = k - k @ s.T @ sigma_inv @ s @ k + np.outer(u, u)
    inner = sigma_inv @ (np.outer(y, y) @ sigma_inv - np.eye(n)) @ np.diag(v_delta)
    return k_new, sigma2 + sigma2**2 / n * np.trace(inner)


def _random_problem(rng, n=30, m=4):
    s = sparse.csc_matrix(rng.normal(size=(n, m)))
    obs = ObservationSet(rng.uniform(size=(n, 2)), rng.normal(size=n))
    a = rng.normal(size=(m, m))
    k = a @ a.T + np.eye(m)
    return s, obs, k


def _scalar():
    s = sparse.csc_matrix(np.ones((1, 1)))
    obs = ObservationSet(np.array([[0.5, 0.5]]), np.array([2.0]))
    return s, obs, NoiseSpec.homoskedastic(1, 1.0)


def test_em_step_full_scalar():
    s, obs, noise = _scalar()
    k_new, sigma_new = em_step_full((np.ones((1, 1)), 1.0), obs, s, noise)
    assert k_new[0, 0] == pytest.approx(1.5)
    assert sigma_new == pytest.approx(1.5)


def test_em_step_identity_scalar_coincides_with_full():
    s, obs, noise = _scalar()
    assert em_step_identity((1.0, 1.0), obs, s, noise) == pytest.approx((1.5, 1.5))


@pytest.mark.parametrize("seed", range(50))
def test_em_step_full_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 7))
    s, obs, k = _random_problem(rng, n=int(rng.integers(m + 5, 41)), m=m)
    v_delta = rng.uniform(0.5, 2.0, size=obs.n)
    noise = NoiseSpec(1.0, 0.2, v_delta, np.ones(obs.n))
    k_new, sigma_new = em_step_full((k, 0.7), obs, s, noise)
    k_ref, sigma_ref = _dense_em_step(k, 0.7, s.toarray(), obs.values, v_delta, 0.2)
    np.testing.assert_allclose(k_new, k_ref, rtol=1e-9, atol=1e-9 * np.abs(k_ref).max())
    assert sigma_new == pytest.approx(sigma_ref, rel=1e-9)


def test_em_step_identity_is_trace_of_full_update(rng):
    s, obs, _ = _random_problem(rng)
    noise = NoiseSpec.homoskedastic(obs.n, 1.0)
    rho_new, sigma_new = em_step_identity((0.8, 0.5), obs, s, noise)
    k_ref, sigma_ref = _dense_em_step(0.8 * np.eye(4), 0.5, s.toarray(), obs.values, np.ones(obs.n))
    assert rho_new == pytest.approx(np.trace(k_ref) / 4, rel=1e-9)
    assert sigma_new == pytest.approx(sigma_ref, rel=1e-9)


def test_em_step_zero_data_shrinks(rng):
    s, obs, k = _random_problem(rng)
    zero = obs.with_values(np.zeros(obs.n))
    k_new, sigma_new = em_step_full((k, 0.5), zero, s, NoiseSpec.homoskedastic(obs.n, 1.0))
    assert sigma_new < 0.5
    assert np.trace(k_new) < np.trace(k)


def test_em_step_rejects_bad_state(rng):
    s, obs, k = _random_problem(rng)
    with pytest.raises(InvalidArgumentError):
        em_step_full((k, 0.0), obs, s, NoiseSpec.homoskedastic(obs.n, 1.0))


@pytest.mark.parametrize("seed", range(10))
def test_em_full_trace_is_non_decreasing(seed):
    rng = np.random.default_rng(100 + seed)
    s, obs, _ = _random_problem(rng, n=int(rng.integers(30, 61)), m=int(rng.integers(2, 7)))
    result = fit_em(obs, s, NoiseSpec.homoskedastic(obs.n, 0.0), FitConfig(FitMethod.EM_FULL, 200, 1e-14))
    trace = np.asarray(result.loglik_trace)
    assert len(trace) == result.iterations
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]))
    assert isinstance(result.params.kform, FullK)


def test_em_trace_is_the_full_loglik(rng):
    s, obs, _ = _random_problem(rng)
    noise = NoiseSpec.homoskedastic(obs.n, 0.0)
    result = fit_em(obs, s, noise, FitConfig(FitMethod.EM_IDENTITY, 5, 1e-14))
    assert result.loglik_trace[-1] == pytest.approx(full_loglik(obs, s, result.params), rel=1e-9)


def test_em_one_iteration_cap(rng):
    s, obs, _ = _random_problem(rng)
    result = fit_em(obs, s, NoiseSpec.homoskedastic(obs.n, 0.0), FitConfig(FitMethod.EM_FULL, 1))
    assert result.iterations == 1
    assert not result.converged


def test_fit_em_rejects_rbk(rng):
    s, obs, _ = _random_problem(rng)
    with pytest.raises(InvalidArgumentError):
        fit_em(obs, s, NoiseSpec.homoskedastic(obs.n, 0.0), FitConfig(FitMethod.RBK))


def test_rbk_improves_on_initial_point(small_field, small_basis):
    _, _, s = small_basis
    obs = small_field.observations
    noise = NoiseSpec.homoskedastic(obs.n, 0.0)
    result = fit_rbk(obs, s, noise)
    assert result.method is FitMethod.RBK
    assert isinstance(result.params.kform, ScaledK)
    assert len(result.loglik_trace) == result.iterations

    qr = thin_qr(s)
    y_star = apply_qt(qr, obs.values)
    rho0 = np.var(y_star) / np.mean(np.diag(qr.r1 @ qr.r1.T))
    sigma0 = 0.1 * np.var(obs.values)
    start = reduced_loglik(reduce(obs, s, noise.with_delta(sigma0), qr), ScaledK(rho0))
    fitted = reduced_loglik(reduce(obs, s, result.params.noise, qr), result.params.kform)
    assert fitted >= start


def test_rbk_beats_random_restarts(small_field, small_basis):
    _, _, s = small_basis
    obs = small_field.observations
    noise = NoiseSpec.homoskedastic(obs.n, 0.0)
    result = fit_rbk(obs, s, noise)
    qr = thin_qr(s)
    fitted = reduced_loglik(reduce(obs, s, result.params.noise, qr), result.params.kform)
    scale = np.log(np.var(obs.values))
    starts = np.random.default_rng(7).uniform(scale - 7.0, scale + 4.0, size=(50, 2))
    for log_rho, log_sigma2 in starts:
        start = reduced_loglik(reduce(obs, s, noise.with_delta(np.exp(log_sigma2)), qr), ScaledK(np.exp(log_rho)))
        assert start <= fitted + 1e-6 * (1.0 + abs(fitted))


def _orthonormal_problem(seed, n=2000, m=10, rho_k=2.0, sigma2=0.5):
    rng = np.random.default_rng(seed)
    rows = np.arange(n)
    s = sparse.csc_matrix((np.full(n, np.sqrt(m / n)), (rows, rows * m // n)), shape=(n, m))
    y = s @ rng.normal(scale=np.sqrt(rho_k), size=m) + rng.normal(scale=np.sqrt(sigma2), size=n)
    return s, ObservationSet(rng.uniform(size=(n, 2)), y)


@pytest.mark.parametrize("seed", range(20))
def test_em_identity_recovers_orthonormal_model(seed):
    s, obs = _orthonormal_problem(seed)
    n, m = s.shape
    result = fit_em(obs, s, NoiseSpec.homoskedastic(n, 0.0), FitConfig(FitMethod.EM_IDENTITY, 5000, 1e-10))
    assert 0.4 <= result.sigma2_delta <= 0.6

    # closed-form maximizer: S'y carries rho_k + sigma2, the residual sigma2 alone
    y_star = s.T @ obs.values
    residual = obs.values - s @ y_star
    sigma2_hat = float(residual @ residual) / (n - m)
    rho_hat = float(y_star @ y_star) / m - sigma2_hat
    if rho_hat > 0.25:
        assert result.converged
        assert result.sigma2_delta == pytest.approx(sigma2_hat, rel=1e-4)
        assert result.rho_k == pytest.approx(rho_hat, rel=1e-3)


def test_rbk_zero_data_goes_to_floor(small_field, small_basis):
    _, _, s = small_basis
    obs = small_field.observations.with_values(np.zeros(small_field.observations.n))
    result = fit_rbk(obs, s, NoiseSpec.homoskedastic(obs.n, 0.0))
    assert result.converged
    assert result.rho_k <= 1e-7
    assert result.sigma2_delta <= 1e-7


@pytest.mark.parametrize("c", [0.5, 2.0])
@pytest.mark.parametrize("method", [FitMethod.RBK, FitMethod.EM_IDENTITY])
def test_fits_scale_with_data(small_field, small_basis, method, c):
    _, _, s = small_basis
    obs = small_field.observations
    noise = NoiseSpec.homoskedastic(obs.n, 0.0)
    cfg = FitConfig(method, 1000, 1e-10)
    base = fit(obs, s, noise, cfg)
    scaled = fit(obs.with_values(c * obs.values), s, noise, cfg)
    assert scaled.rho_k == pytest.approx(c**2 * base.rho_k, rel=1e-4)
    assert scaled.sigma2_delta == pytest.approx(c**2 * base.sigma2_delta, rel=1e-4)


@pytest.mark.parametrize("method", list(FitMethod))
def test_fits_invariant_to_row_order(small_field, small_basis, method):
    knots, config, s = small_basis
    obs = small_field.observations
    noise = NoiseSpec.homoskedastic(obs.n, 0.0)
    cfg = FitConfig(method, 300, 1e-10)
    perm = np.random.default_rng(5).permutation(obs.n)
    permuted = obs.take(perm)
    base = fit(obs, s, noise, cfg)
    shuffled = fit(permuted, build_basis(permuted.locations, knots, config), noise, cfg)
    assert shuffled.rho_k == pytest.approx(base.rho_k, rel=1e-4)
    assert shuffled.sigma2_delta == pytest.approx(base.sigma2_delta, rel=1e-4)


def test_fit_config_validation():
    with pytest.raises(InvalidArgumentError):
        FitConfig(max_iters=0)
    with pytest.raises(InvalidArgumentError):
        FitConfig(rel_tol=0.0)
    assert FitConfig("em_full").method is FitMethod.EM_FULL
    assert FitMethod.parse("EM-Identity") is FitMethod.EM_IDENTITY
    with pytest.raises(InvalidArgumentError):
        FitMethod.parse("gibbs")


def test_result_reports_mean_diagonal(rng):
    s, obs, _ = _random_problem(rng)
    result = fit_em(obs, s, NoiseSpec.homoskedastic(obs.n, 0.0), FitConfig(FitMethod.EM_FULL, 3))
    assert result.rho_k == pytest.approx(np.mean(np.diag(result.params.kform.k)))
    assert result.wall_seconds >= 0
