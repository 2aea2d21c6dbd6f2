import numpy as np
import pandas as pd
import pytest

from krige.detrend import (
    APPLICATION_SPECS,
    CovariateSpec,
    DetrendModel,
    ExtrapolationWarning,
    SplineBasis,
    detrend,
    fit_detrend,
    spline_basis,
)
from krige.errors import CollinearCovariatesError, InputFormatError, InvalidArgumentError


@pytest.fixture
def stations(rng):
    n = 80
    frame = pd.DataFrame(
        {
            "lon": rng.uniform(-120, -100, size=n),
            "lat": rng.uniform(30, 45, size=n),
            "elev": rng.gamma(2.0, 500.0, size=n),
        }
    )
    frame["value"] = 20 - 0.006 * frame["elev"] - 0.5 * (frame["lat"] - 37) + rng.normal(size=n)
    return frame


def _hat_residual_ss(x, y):
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    r = y - x @ beta
    return float(r @ r)


def test_spec_parse_and_knot_count():
    spec = CovariateSpec.parse("elev:3:5")
    assert spec == CovariateSpec("elev", 3, 5)
    assert spec.n_knots == 2
    assert CovariateSpec("x", 3, 3).n_knots == 0
    with pytest.raises(InvalidArgumentError):
        CovariateSpec.parse("elev:3")
    with pytest.raises(InvalidArgumentError):
        CovariateSpec.parse("elev:three:5")
    with pytest.raises(InvalidArgumentError):
        CovariateSpec("x", 3, 2)


def test_spline_pure_polynomial(rng):
    v = rng.uniform(size=30)
    cols = spline_basis(v, CovariateSpec("x", 3, 3))
    z = (v - v.mean()) / v.std()
    np.testing.assert_allclose(cols, np.column_stack([z, z**2, z**3]))


def test_spline_single_knot_at_median(rng):
    v = rng.uniform(size=31)
    basis = SplineBasis.fit(v, CovariateSpec("x", 2, 3))
    assert len(basis.knots) == 1
    assert basis.knots[0] == pytest.approx((np.median(v) - v.mean()) / v.std())
    assert basis.columns == ["x[0]", "x[1]", "x[2]"]


def test_spline_truncated_terms_vanish_at_minimum(rng):
    v = rng.uniform(size=40)
    basis = SplineBasis.fit(v, CovariateSpec("x", 3, 6))
    cols = basis.evaluate([v.min()])
    np.testing.assert_array_equal(cols[0, 3:], 0.0)


def test_constant_covariate_is_collinear():
    with pytest.raises(CollinearCovariatesError):
        SplineBasis.fit(np.ones(20), CovariateSpec("flat", 1, 1))


def test_y_in_span_detrends_to_zero(stations):
    model = fit_detrend(stations["value"], stations, APPLICATION_SPECS)
    y = model.design(stations) @ np.linspace(1.0, 2.0, model.p)
    y_tilde, _, _ = detrend(y, stations, APPLICATION_SPECS)
    assert y_tilde.shape == (len(stations) - model.p,)
    assert np.max(np.abs(y_tilde)) < 1e-8


def test_intercept_only_centers(rng):
    y = rng.normal(size=25)
    y_tilde, _, model = detrend(y, {}, [])
    assert model.p == 1
    assert float(y_tilde @ y_tilde) == pytest.approx(float(np.sum((y - y.mean()) ** 2)), rel=1e-10)
    assert model.alpha[0] == pytest.approx(y.mean())


def test_intercept_only_design_at_frame_sites(rng, stations):
    y = rng.normal(size=25)
    _, _, model = detrend(y, {}, [])
    sites = stations.iloc[:4]
    np.testing.assert_array_equal(model.design(sites), np.ones((4, 1)))
    np.testing.assert_allclose(model.add_back(np.arange(4.0), sites).predictions, np.arange(4.0) + y.mean())
    assert model.design({"elev": [1.0, 2.0, 3.0]}).shape == (3, 1)


def test_projection_matches_hat_matrix(stations):
    y = stations["value"].to_numpy()
    y_tilde, project_basis, model = detrend(y, stations, APPLICATION_SPECS)
    x = model.design(stations)
    assert model.p == 1 + 5 + 4 + 6
    assert float(y_tilde @ y_tilde) == pytest.approx(_hat_residual_ss(x, y), rel=1e-9)
    # projected basis columns are orthogonal to the design
    s = np.random.default_rng(0).normal(size=(len(stations), 4))
    projected = project_basis(s)
    assert projected.shape == (len(stations) - model.p, 4)
    for j in range(4):
        assert float(projected[:, j] @ projected[:, j]) == pytest.approx(_hat_residual_ss(x, s[:, j]), rel=1e-9)


def test_alpha_is_least_squares(stations):
    y = stations["value"].to_numpy()
    model = fit_detrend(y, stations, APPLICATION_SPECS)
    x = model.design(stations)
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    np.testing.assert_allclose(x @ model.alpha, x @ beta, rtol=1e-8, atol=1e-8)


def test_add_back(stations):
    y = stations["value"].to_numpy()
    model = fit_detrend(y, stations, APPLICATION_SPECS)
    sites = stations.iloc[:5]
    effect = model.design(sites) @ model.alpha
    np.testing.assert_allclose(model.add_back(np.zeros(5), sites).predictions, effect)
    zero = DetrendModel(model.splines, np.zeros(model.p), model.n)
    np.testing.assert_allclose(zero.add_back(np.arange(5.0), sites).predictions, np.arange(5.0))


def test_add_back_reconstructs_training_data(stations):
    y = stations["value"].to_numpy()
    model = fit_detrend(y, stations, APPLICATION_SPECS)
    residual = y - model.design(stations) @ model.alpha
    np.testing.assert_allclose(model.add_back(residual, stations).predictions, y, atol=1e-9)


def test_add_back_flags_extrapolation(stations):
    model = fit_detrend(stations["value"], stations, APPLICATION_SPECS)
    sites = stations.iloc[:3].copy()
    sites.loc[sites.index[0], "elev"] = stations["elev"].max() * 3
    with pytest.warns(ExtrapolationWarning):
        result = model.add_back(np.zeros(3), sites)
    assert result.extrapolated.tolist() == [True, False, False]
    assert result.n_extrapolated == 1


def test_collinear_covariates_are_named(stations):
    frame = stations.assign(copy=stations["lat"])
    with pytest.raises(CollinearCovariatesError) as info:
        fit_detrend(frame["value"], frame, [CovariateSpec("lat", 1, 1), CovariateSpec("copy", 1, 1)])
    assert info.value.columns


def test_too_few_observations(rng):
    frame = pd.DataFrame({"x": rng.uniform(size=6)})
    with pytest.raises(InvalidArgumentError):
        fit_detrend(rng.normal(size=6), frame, [CovariateSpec("x", 3, 5)])


def test_missing_covariate(stations):
    with pytest.raises(InvalidArgumentError):
        fit_detrend(stations["value"], stations, [CovariateSpec("slope", 1, 1)])


def test_model_save_and_load(tmp_path, stations):
    model = fit_detrend(stations["value"], stations, APPLICATION_SPECS)
    path = tmp_path / "model.json"
    model.save(path)
    loaded = DetrendModel.load(path)
    assert loaded.columns == model.columns
    sites = stations.iloc[:4]
    np.testing.assert_allclose(
        loaded.add_back(np.ones(4), sites).predictions, model.add_back(np.ones(4), sites).predictions
    )
    with pytest.raises(InvalidArgumentError):
        loaded.project(stations["value"])


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(InputFormatError):
        DetrendModel.load(path)
