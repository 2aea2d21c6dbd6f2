"""Kriging predictions and standard errors from a saved fit record."""

from __future__ import annotations

import argparse
import logging

from krige.errors import UsageError
from krige.formats import read_fit_record, read_observations, read_sites, write_predictions
from krige.geometry import build_basis
from krige.prediction import krige
from krige.sre_model import FullK, NoiseSpec, ScaledK, SREParams
from ui.components import render_header, render_written

from state import RunConfig

from .base import BaseCommand, add_basis_arguments, knots_from_config

logger = logging.getLogger(__name__)


class PredictCommand(BaseCommand):
    id = "predict"
    label = "Predict"
    description = "krige at prediction sites using a fit record"
    input_options = ("obs", "fit", "sites")

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--obs", help="observations CSV used for the fit")
        parser.add_argument("--fit", help="fit record written by the fit command")
        parser.add_argument("--sites", help="prediction sites CSV with x,y columns")
        add_basis_arguments(parser)
        parser.add_argument("--sigma2-eps", type=float, default=0.0, help="known measurement-error variance")
        parser.add_argument("--out", help="predictions CSV (x,y,pred,se)")

    def run(self, config: RunConfig) -> int:
        out = self.require(config, "out")
        obs = read_observations(self.require(config, "obs"))
        record, k = read_fit_record(self.require(config, "fit"))
        sites = read_sites(self.require(config, "sites"))
        knots, basis_config = knots_from_config(config)
        if knots.m != record.m:
            raise UsageError(
                f"basis flags give {knots.m} knots but the fit record has m={record.m}"
            )
        render_header(self.label, {**config.options, "n": obs.n, "sites": sites.shape[0]})

        kform = FullK(k) if k is not None else ScaledK(record.rho_k)
        noise = NoiseSpec.homoskedastic(obs.n, record.sigma2_delta, config["sigma2_eps"])
        params = SREParams(kform, noise)
        s = build_basis(obs.locations, knots, basis_config)
        a = build_basis(sites, knots, basis_config)
        result = krige(a, s, params, obs.values, sites)
        write_predictions(out, result.sites, result.predictions, result.std_errors)
        if result.sites.shape[0]:
            print(f"mean kriging SE = {result.mean_se:.6g}")
        render_written([out])
        return 0
