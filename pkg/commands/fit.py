"""Estimate SRE parameters from an observations file."""

from __future__ import annotations

import argparse
import logging

from krige.estimation import FitConfig, FitMethod, fit
from krige.formats import (
    FitRecord,
    read_observations,
    write_fit_record,
    write_knots,
    write_matrix_triplets,
)
from krige.geometry import build_basis
from krige.sre_model import FullK, NoiseSpec
from ui.components import render_fit_summary, render_header, render_written

from state import RunConfig

from .base import BaseCommand, add_basis_arguments, knots_from_config

logger = logging.getLogger(__name__)


class FitCommand(BaseCommand):
    id = "fit"
    label = "Fit parameters"
    description = "fit the SRE model by reduced-basis ML or EM"
    input_options = ("obs",)

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--obs", help="observations CSV (x,y,value)")
        parser.add_argument(
            "--method",
            choices=[m.value for m in FitMethod],
            default=FitMethod.RBK.value,
            help="estimation method (default rbk)",
        )
        add_basis_arguments(parser)
        parser.add_argument("--sigma2-eps", type=float, default=0.0, help="known measurement-error variance")
        parser.add_argument("--max-iters", type=int, default=1000)
        parser.add_argument("--rel-tol", type=float, default=1e-6)
        parser.add_argument("--out", help="fit record CSV")
        parser.add_argument("--knots-out", help="also write the knots (level,x,y)")
        parser.add_argument("--basis-out", help="also write S as sparse triplets")

    def run(self, config: RunConfig) -> int:
        out = self.require(config, "out")
        obs = read_observations(self.require(config, "obs"))
        knots, basis_config = knots_from_config(config)
        render_header(self.label, {**config.options, "n": obs.n, "m": knots.m})

        s = build_basis(obs.locations, knots, basis_config)
        noise = NoiseSpec.homoskedastic(obs.n, 0.0, config["sigma2_eps"])
        cfg = FitConfig(FitMethod(config["method"]), config["max_iters"], config["rel_tol"])
        result = fit(obs, s, noise, cfg)

        record = FitRecord(
            method=result.method.value,
            m=knots.m,
            b=basis_config.bandwidth_constant,
            iterations=result.iterations,
            converged=result.converged,
            rho_k=result.rho_k,
            sigma2_delta=result.sigma2_delta,
            seconds=result.wall_seconds,
        )
        kform = result.params.kform
        write_fit_record(out, record, kform.k if isinstance(kform, FullK) else None)
        written = [out]
        if config.get("knots_out"):
            write_knots(config["knots_out"], knots)
            written.append(config["knots_out"])
        if config.get("basis_out"):
            write_matrix_triplets(config["basis_out"], s)
            written.append(config["basis_out"])

        render_fit_summary(result, knots.m, basis_config.bandwidth_constant)
        render_written(written)
        return 0
