import json

import numpy as np
import pandas as pd
import pytest

from app import main
from krige.formats import read_predictions, read_truth
from krige.geometry import triangular_knot_grid
from krige.sre_model import k_correlation_profile


@pytest.fixture
def simulated(tmp_path):
    truth, obs = tmp_path / "truth.csv", tmp_path / "obs.csv"
    code = main(
        [
            "simulate", "--grid", "20", "--nobs", "100", "--theta", "0.137",
            "--sigma2", "0.1", "--seed", "3", "--out-truth", str(truth), "--out-obs", str(obs),
        ]
    )
    assert code == 0
    return truth, obs


@pytest.fixture
def sites(tmp_path):
    path = tmp_path / "sites.csv"
    path.write_text("x,y\n0.5,0.5\n0.25,0.75\n0.9,0.1\n")
    return path


@pytest.fixture
def stations(tmp_path):
    rng = np.random.default_rng(8)
    n = 80
    frame = pd.DataFrame(
        {
            "lon": rng.uniform(-110, -100, size=n),
            "lat": rng.uniform(35, 45, size=n),
            "elev": rng.gamma(3.0, 400.0, size=n),
        }
    )
    frame["value"] = 25 - 0.0065 * frame["elev"] - 0.4 * (frame["lat"] - 40) + rng.normal(scale=0.5, size=n)
    path = tmp_path / "stations.csv"
    frame.to_csv(path, index=False)
    site_path = tmp_path / "station_sites.csv"
    frame.iloc[:5][["lon", "lat", "elev"]].to_csv(site_path, index=False)
    return path, site_path


def _lines(path):
    return path.read_text().splitlines()


def test_simulate_writes_grid_and_observations(simulated):
    truth, obs = simulated
    assert _lines(truth)[0] == "x,y,f"
    grid, f = read_truth(truth)
    assert grid.shape == (400, 2)
    assert f.shape == (400,)
    assert _lines(obs)[0] == "x,y,value"
    assert len(_lines(obs)) == 101


def test_simulate_is_deterministic(tmp_path, simulated):
    _, obs = simulated
    again = tmp_path / "again.csv"
    main(
        [
            "simulate", "--grid", "20", "--nobs", "100", "--theta", "0.137", "--sigma2", "0.1",
            "--seed", "3", "--out-truth", str(tmp_path / "t2.csv"), "--out-obs", str(again),
        ]
    )
    assert again.read_bytes() == obs.read_bytes()


@pytest.mark.parametrize(
    "extra",
    [["--nobs", "0"], ["--nobs", "500"], ["--sigma2", "-1"], ["--seed", "-2"], []],
)
def test_simulate_usage_errors(tmp_path, extra):
    argv = ["simulate", "--grid", "20", "--out-truth", str(tmp_path / "t.csv"), "--out-obs", str(tmp_path / "o.csv")]
    if extra:
        argv += ["--theta", "0.137"] + extra
    assert main(argv) == 2


def test_unknown_command_and_flag():
    assert main(["interpolate"]) == 2
    assert main(["fit", "--bogus"]) == 2


def test_fit_then_predict(tmp_path, simulated, sites):
    _, obs = simulated
    fit_path, pred_path = tmp_path / "fit.csv", tmp_path / "pred.csv"
    knots_path = tmp_path / "knots.csv"
    assert main(["fit", "--obs", str(obs), "--xdiv", "5", "--out", str(fit_path), "--knots-out", str(knots_path)]) == 0
    record = pd.read_csv(fit_path)
    assert record.loc[0, "method"] == "rbk"
    assert record.loc[0, "m"] == 23
    assert len(_lines(knots_path)) == 24

    code = main(
        ["predict", "--obs", str(obs), "--fit", str(fit_path), "--sites", str(sites),
         "--xdiv", "5", "--out", str(pred_path)]
    )
    assert code == 0
    pred = read_predictions(pred_path)
    assert list(pred.columns) == ["x", "y", "pred", "se"]
    assert len(pred) == 3
    assert np.all(np.isfinite(pred["pred"]))
    assert np.all(pred["se"] >= 0)


def test_em_full_round_trip(tmp_path, simulated, sites):
    _, obs = simulated
    fit_path, pred_path = tmp_path / "fit.csv", tmp_path / "pred.csv"
    code = main(
        ["fit", "--obs", str(obs), "--xdiv", "5", "--method", "em-full", "--max-iters", "20",
         "--out", str(fit_path), "--basis-out", str(tmp_path / "s.txt")]
    )
    assert code == 0
    sidecar = tmp_path / "fit.K.csv"
    assert sidecar.exists()
    assert np.loadtxt(sidecar, delimiter=",").shape == (23, 23)
    assert _lines(tmp_path / "s.txt")[0].split()[:2] == ["100", "23"]

    args = ["predict", "--obs", str(obs), "--fit", str(fit_path), "--sites", str(sites), "--xdiv", "5",
            "--out", str(pred_path)]
    assert main(args) == 0
    sidecar.unlink()
    assert main(args) == 3


def test_predict_with_no_sites(tmp_path, simulated):
    _, obs = simulated
    fit_path, pred_path = tmp_path / "fit.csv", tmp_path / "pred.csv"
    empty = tmp_path / "empty.csv"
    empty.write_text("x,y\n")
    main(["fit", "--obs", str(obs), "--xdiv", "5", "--method", "em-identity", "--out", str(fit_path)])
    code = main(
        ["predict", "--obs", str(obs), "--fit", str(fit_path), "--sites", str(empty),
         "--xdiv", "5", "--out", str(pred_path)]
    )
    assert code == 0
    assert _lines(pred_path) == ["x,y,pred,se"]


def test_predict_rejects_other_basis(tmp_path, simulated, sites):
    _, obs = simulated
    fit_path = tmp_path / "fit.csv"
    main(["fit", "--obs", str(obs), "--xdiv", "5", "--method", "em-identity", "--out", str(fit_path)])
    code = main(
        ["predict", "--obs", str(obs), "--fit", str(fit_path), "--sites", str(sites),
         "--xdiv", "9", "--out", str(tmp_path / "pred.csv")]
    )
    assert code == 2


def test_input_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y,value\n0.1,0.2,oops\n")
    assert main(["fit", "--obs", str(bad), "--out", str(tmp_path / "fit.csv")]) == 3
    assert main(["fit", "--obs", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "fit.csv")]) == 2
    assert main(["fit", "--out", str(tmp_path / "fit.csv")]) == 2


def test_config_file_supplies_options(tmp_path, simulated):
    _, obs = simulated
    cfg = tmp_path / "fit.cfg"
    cfg.write_text(f"obs = {obs}\nxdiv = 5\nmethod = em-identity\n")
    fit_path = tmp_path / "fit.csv"
    assert main(["fit", "--config", str(cfg), "--out", str(fit_path)]) == 0
    assert pd.read_csv(fit_path).loc[0, "method"] == "em-identity"


def test_bench_paper_scale_is_refused(tmp_path):
    assert main(["bench", "--scale", "paper", "--out", str(tmp_path / "b.csv")]) == 5


def test_bench_single_cell_and_resume(tmp_path):
    out, summary = tmp_path / "bench.csv", tmp_path / "summary.csv"
    argv = [
        "bench", "--only", "nu=0.5,sigma2=0,m=23,b=1.5", "--replicates", "2",
        "--methods", "em-identity", "--max-iters", "10", "--out", str(out), "--summary", str(summary),
    ]
    assert main(argv) == 0
    first = pd.read_csv(out)
    assert len(first) == 2
    assert first["replicate"].tolist() == [0, 1]
    assert set(first["method"]) == {"em-identity"}
    assert len(pd.read_csv(summary)) == 1

    assert main(argv + ["--resume"]) == 0
    again = pd.read_csv(out)
    assert len(again) == 2
    assert again["seconds"].tolist() == first["seconds"].tolist()


def test_bench_bad_filter(tmp_path):
    out = str(tmp_path / "b.csv")
    assert main(["bench", "--only", "nu=7", "--out", out]) == 2
    assert main(["bench", "--only", "shape=1", "--out", out]) == 2
    assert main(["bench", "--methods", "kriging", "--out", out]) == 2


def test_detrend(tmp_path, stations):
    path, _ = stations
    out, model_out = tmp_path / "detrended.csv", tmp_path / "model.json"
    assert main(["detrend", "--stations", str(path), "--out", str(out), "--model-out", str(model_out)]) == 0
    # intercept plus 5 + 4 + 6 spline columns
    assert len(_lines(out)) == 1 + 80 - 16
    model = json.loads(model_out.read_text())
    assert len(model["alpha"]) == 16

    assert main(["detrend", "--stations", str(path), "--covariate", "elev:1:1", "--out", str(out)]) == 0
    assert len(_lines(out)) == 1 + 80 - 2
    assert main(["detrend", "--stations", str(path), "--covariate", "elev:3", "--out", str(out)]) == 2


def test_select_on_observations(tmp_path, simulated, sites):
    _, obs = simulated
    report, pred = tmp_path / "select.csv", tmp_path / "pred.csv"
    code = main(
        ["select", "--obs", str(obs), "--candidate", "5:1:1.5", "--candidate", "5:1:2.5",
         "--sites", str(sites), "--out", str(report), "--predictions-out", str(pred)]
    )
    assert code == 0
    table = pd.read_csv(report)
    assert len(table) == 2
    assert table["selected"].astype(str).str.lower().tolist().count("true") == 1
    assert len(pd.read_csv(pred)) == 3


def test_select_needs_candidates(tmp_path, simulated):
    _, obs = simulated
    assert main(["select", "--obs", str(obs), "--out", str(tmp_path / "s.csv")]) == 2


def test_select_on_stations(tmp_path, stations):
    path, site_path = stations
    report, pred = tmp_path / "select.csv", tmp_path / "pred.csv"
    code = main(
        ["select", "--stations", str(path), "--candidate", "5:1:1.5", "--criterion", "min-sigma2",
         "--sites", str(site_path), "--out", str(report), "--predictions-out", str(pred)]
    )
    assert code == 0
    assert len(pd.read_csv(report)) == 1
    predictions = pd.read_csv(pred)
    assert len(predictions) == 5
    values = pd.read_csv(path)["value"].iloc[:5].to_numpy()
    # covariate effects are added back onto the kriged residuals
    assert np.all(np.abs(predictions["pred"].to_numpy() - values) < 3)


def test_study_k_recovers_given_k0(tmp_path):
    rng = np.random.default_rng(4)
    knots = triangular_knot_grid(5)
    root = rng.normal(size=(knots.m, knots.m))
    k0 = root @ root.T + knots.m * np.eye(knots.m)
    k0_path, out = tmp_path / "k0.csv", tmp_path / "profile.csv"
    np.savetxt(k0_path, k0, delimiter=",", fmt="%.17g")
    assert main(["study-k", "--k0", str(k0_path), "--xdiv", "5", "--out", str(out)]) == 0
    profile = pd.read_csv(out)
    expected = k_correlation_profile(k0, knots)
    assert len(profile) == len(expected) == knots.m * (knots.m - 1) // 2
    np.testing.assert_allclose(profile["distance"], [d for d, _ in expected], atol=1e-12)
    np.testing.assert_allclose(profile["correlation"], [c for _, c in expected], atol=1e-6)


def test_study_k_from_matern(tmp_path):
    out = tmp_path / "profile.csv"
    assert main(["study-k", "--calibrate", "--nu", "0.5", "--xdiv", "5", "--grid-side", "12", "--out", str(out)]) == 0
    profile = pd.read_csv(out)
    assert len(profile) == 23 * 22 // 2
    assert profile["correlation"].abs().max() <= 1 + 1e-9
    assert main(["study-k", "--xdiv", "5", "--out", str(out)]) == 2


@pytest.mark.slow
def test_bench_filter_counts_every_bandwidth(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--replicates", "1", "--only", "nu=1,sigma2=0.25,m=77", "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    # three methods over the five desk bandwidths
    assert len(frame) == 15
    assert sorted(set(frame["b"])) == [0.5, 1.0, 1.5, 2.0, 2.5]
