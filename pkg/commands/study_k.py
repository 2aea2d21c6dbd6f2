"""Correlation structure of the K implied by a known process covariance."""

from __future__ import annotations

import argparse
import logging

import numpy as np

from krige.covariance import cov_matrix
from krige.errors import UsageError
from krige.formats import read_dense_matrix, write_profile
from krige.geometry import build_basis
from krige.linalg import as_dense
from krige.simulation import unit_grid
from krige.sre_model import empirical_K, k_correlation_profile
from ui.components import render_header, render_written

from state import RunConfig

from .base import (
    BaseCommand,
    add_basis_arguments,
    add_matern_arguments,
    knots_from_config,
    matern_from_config,
)

logger = logging.getLogger(__name__)


class StudyKCommand(BaseCommand):
    id = "study-k"
    label = "K structure study"
    description = "write the knot-pair correlation profile of the empirical K"
    input_options = ("k0",)

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        add_matern_arguments(parser)
        parser.add_argument("--grid-side", type=int, default=20, help="side of the unit-square grid (default 20)")
        add_basis_arguments(parser, domain=False)
        parser.add_argument("--k0", help="dense K0 CSV; uses S K0 S' instead of the Matérn covariance")
        parser.add_argument("--out", help="profile CSV (distance,correlation)")

    def run(self, config: RunConfig) -> int:
        out = self.require(config, "out")
        if config["grid_side"] < 2:
            raise UsageError(f"--grid-side must be >= 2, got {config['grid_side']}")
        knots, basis_config = knots_from_config(config)
        grid = unit_grid(config["grid_side"])
        s = build_basis(grid, knots, basis_config)
        render_header(self.label, {**config.options, "n": grid.shape[0], "m": knots.m})

        if config.get("k0"):
            k0 = read_dense_matrix(config["k0"])
            if k0.shape[0] != knots.m:
                raise UsageError(f"--k0 is {k0.shape[0]}x{k0.shape[0]} but the basis has {knots.m} knots")
            dense = as_dense(s)
            sigma_f = dense @ k0 @ dense.T
            sigma_f = 0.5 * (sigma_f + sigma_f.T)
        else:
            sigma_f = cov_matrix(matern_from_config(config), grid)

        k = empirical_K(s, sigma_f)
        profile = k_correlation_profile(k, knots)
        write_profile(out, profile)
        if profile:
            corr = np.abs([c for _, c in profile])
            print(f"{len(profile)} knot pairs, max |correlation| = {corr.max():.4f}, mean = {corr.mean():.4f}")
        render_written([out])
        return 0
