"""
Pick the best knot layout among candidates.

Every candidate is fitted by reduced-basis maximum likelihood and ranked by
the mean kriging standard error over the sites (or the fitted fine-scale
variance). With ``--stations`` the covariate effects are projected out
first and added back to the final predictions.
"""

from __future__ import annotations

import argparse
import logging
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from krige.detrend import DetrendModel, fit_detrend
from krige.errors import UsageError
from krige.estimation import FitConfig, FitMethod
from krige.formats import (
    read_observations,
    read_sites,
    read_stations,
    write_predictions,
    write_selection_report,
)
from krige.geometry import BasisConfig, Domain, KnotSet, ObservationSet, build_basis
from krige.prediction import CandidateReport, SelectionCriterion, krige, model_select
from krige.sre_model import NoiseSpec, SREParams
from ui.components import render_header, render_selection_report, render_written

from state import RunConfig

from .base import (
    BaseCommand,
    add_covariate_arguments,
    build_knots,
    covariate_specs_from_config,
    parse_domain,
    station_domain,
)

logger = logging.getLogger(__name__)


def parse_candidate(text: str, domain: Domain) -> Tuple[BasisConfig, KnotSet]:
    """``xdiv:levels:b``, e.g. ``9:2:1.5``."""
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"--candidate {text!r} is not xdiv:levels:b")
    try:
        xdiv, levels, b = int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError:
        raise UsageError(f"--candidate {text!r} has a non-numeric field") from None
    knots, config = build_knots(xdiv, levels, b, domain)
    return config, knots


class SelectCommand(BaseCommand):
    id = "select"
    label = "Model selection"
    description = "fit candidate knot layouts and report the best one"
    input_options = ("obs", "stations", "sites")

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        source = parser.add_mutually_exclusive_group()
        source.add_argument("--obs", help="observations CSV (x,y,value)")
        source.add_argument("--stations", help="station CSV (lon,lat,elev,value); enables detrending")
        parser.add_argument(
            "--candidate",
            action="append",
            default=None,
            metavar="XDIV:LEVELS:B",
            help="candidate knot layout, repeatable",
        )
        parser.add_argument(
            "--criterion",
            choices=[c.value for c in SelectionCriterion],
            default=SelectionCriterion.MEAN_KRIG_SE.value,
        )
        parser.add_argument("--sites", help="prediction sites (x,y, or lon,lat plus covariates with --stations)")
        parser.add_argument("--domain", default=None, help="knot rectangle xmin,xmax,ymin,ymax for --obs")
        parser.add_argument("--sigma2-eps", type=float, default=0.0, help="known measurement-error variance")
        add_covariate_arguments(parser)
        parser.add_argument("--out", help="selection report CSV")
        parser.add_argument("--predictions-out", help="predictions of the winner at --sites")

    def run(self, config: RunConfig) -> int:
        out = self.require(config, "out")
        texts = config.get("candidate")
        if not texts:
            raise UsageError("--candidate is required (at least one)")
        if config.get("obs") and config.get("stations"):
            raise UsageError("--obs and --stations are mutually exclusive")
        if config.get("predictions_out") and not config.get("sites"):
            raise UsageError("--predictions-out needs --sites")

        model: Optional[DetrendModel] = None
        train_covariates = site_covariates = None
        if config.get("stations"):
            specs = covariate_specs_from_config(config)
            names = [s.name for s in specs]
            frame = read_stations(config["stations"], names)
            obs = ObservationSet(frame[["lon", "lat"]].to_numpy(), frame["value"].to_numpy())
            domain = station_domain(frame["lon"], frame["lat"])
            model = fit_detrend(obs.values, frame, specs)
            train_covariates = frame
            sites = None
            if config.get("sites"):
                site_covariates = read_stations(config["sites"], names, need_value=False)
                sites = site_covariates[["lon", "lat"]].to_numpy()
        elif config.get("obs"):
            obs = read_observations(config["obs"])
            domain = parse_domain(config.get("domain"))
            sites = read_sites(config["sites"]) if config.get("sites") else None
        else:
            raise UsageError("one of --obs or --stations is required")

        candidates = [parse_candidate(text, domain) for text in texts]
        render_header(self.label, {**config.options, "n": obs.n, "candidates": len(candidates)})
        noise = NoiseSpec.homoskedastic(obs.n, 0.0, config["sigma2_eps"])
        report = model_select(
            candidates,
            obs,
            noise,
            SelectionCriterion(config["criterion"]),
            sites=sites if sites is not None and len(sites) else None,
            cfg=FitConfig(FitMethod.RBK),
            projector=model,
        )
        write_selection_report(out, report)
        written: List[str] = [out]
        render_selection_report(report)

        if config.get("predictions_out"):
            path = config["predictions_out"]
            self._predict(
                path, report.best, candidates[report.winner], obs, sites,
                config["sigma2_eps"], model, train_covariates, site_covariates,
            )
            written.append(path)
        render_written(written)
        return 0

    @staticmethod
    def _predict(
        path: str,
        best: CandidateReport,
        candidate: Tuple[BasisConfig, KnotSet],
        obs: ObservationSet,
        sites: np.ndarray,
        sigma2_eps: float,
        model: Optional[DetrendModel],
        train_covariates: Optional[pd.DataFrame],
        site_covariates: Optional[pd.DataFrame],
    ) -> None:
        """Krige the winner at the sites; in stations mode the kriging runs on
        the least-squares residuals and the covariate effects are added back."""
        config, knots = candidate
        residuals = obs.values
        if model is not None:
            residuals = obs.values - model.design(train_covariates) @ model.alpha
        noise = NoiseSpec.homoskedastic(obs.n, best.fit.sigma2_delta, sigma2_eps)
        params = SREParams(best.fit.params.kform, noise)
        s = build_basis(obs.locations, knots, config)
        a = build_basis(sites, knots, config)
        result = krige(a, s, params, residuals, sites)
        predictions = result.predictions
        if model is not None and result.sites.shape[0]:
            predictions = model.add_back(predictions, site_covariates).predictions
        write_predictions(path, result.sites, predictions, result.std_errors)
