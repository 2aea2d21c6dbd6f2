"""Simulate a Matérn truth field on a grid and noisy observations from it."""

from __future__ import annotations

import argparse
import logging

from krige.errors import UsageError
from krige.formats import write_observations, write_truth
from krige.simulation import SimDesign, simulate_field
from ui.components import render_header, render_written

from state import RunConfig

from .base import BaseCommand, add_matern_arguments, matern_from_config

logger = logging.getLogger(__name__)


class SimulateCommand(BaseCommand):
    id = "simulate"
    label = "Simulate field"
    description = "simulate a Gaussian random field and observations"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--grid", type=int, default=50, help="grid side length (default 50)")
        parser.add_argument("--nobs", type=int, default=300, help="number of observations (default 300)")
        add_matern_arguments(parser)
        parser.add_argument("--sigma2", type=float, default=0.0, help="noise variance (default 0)")
        parser.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        parser.add_argument("--out-truth", help="grid truth CSV (x,y,f)")
        parser.add_argument("--out-obs", help="observations CSV (x,y,value)")

    def run(self, config: RunConfig) -> int:
        out_truth = self.require(config, "out_truth")
        out_obs = self.require(config, "out_obs")
        if config["grid"] < 2:
            raise UsageError(f"--grid must be >= 2, got {config['grid']}")
        if not 1 <= config["nobs"] <= config["grid"] ** 2:
            raise UsageError(f"--nobs must be between 1 and {config['grid'] ** 2}, got {config['nobs']}")
        if config["sigma2"] < 0:
            raise UsageError(f"--sigma2 must be >= 0, got {config['sigma2']}")
        if config["seed"] < 0:
            raise UsageError(f"--seed must be >= 0, got {config['seed']}")

        matern = matern_from_config(config)
        render_header(self.label, {**config.options, "theta": matern.theta})
        design = SimDesign(
            grid_side=config["grid"],
            n_obs=config["nobs"],
            matern=matern,
            sigma2_noise=config["sigma2"],
            seed=config["seed"],
        )
        field = simulate_field(design)
        write_truth(out_truth, field.grid, field.truth)
        write_observations(out_obs, field.observations)
        render_written([out_truth, out_obs])
        return 0
