"""
Abstract base class for command-line subcommands.

Each subcommand inherits from ``BaseCommand``, declares its flags in
``add_arguments`` and does its work in ``run``. The class attributes ``id``,
``label`` and ``description`` define how the command appears in ``--help``.
Shared flag groups (knot layout, Matérn range) live here as helpers so every
command spells them the same way.
"""

from __future__ import annotations

import argparse
from abc import ABC, abstractmethod
from typing import List, Optional

from krige.covariance import MaternParams, calibrate_theta
from krige.detrend import APPLICATION_SPECS, CovariateSpec
from krige.errors import InvalidArgumentError, UsageError
from krige.geometry import (
    UNIT_SQUARE,
    BasisConfig,
    Domain,
    KnotSet,
    divisor_chain,
    multi_resolution_knots,
)

from state import RunConfig, check_input_paths


class BaseCommand(ABC):
    """Interface of a subcommand."""

    id: str  # subcommand name (e.g. "fit")
    label: str  # short title for the run header
    description: str  # one-line summary for --help

    # option names holding input files, checked before run()
    input_options: tuple = ()

    @abstractmethod
    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        """Declare this command's flags on its subparser."""
        raise NotImplementedError

    @abstractmethod
    def run(self, config: RunConfig) -> int:
        """Execute the command and return the process exit status."""
        raise NotImplementedError

    def execute(self, config: RunConfig) -> int:
        check_input_paths(config.get(name) for name in self.input_options)
        return self.run(config)

    @staticmethod
    def require(config: RunConfig, name: str) -> str:
        value = config.get(name)
        if value is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")
        return value


# -------------------------------------------------
# Shared flag groups
# -------------------------------------------------
def add_basis_arguments(parser: argparse.ArgumentParser, domain: bool = True) -> None:
    group = parser.add_argument_group("basis")
    group.add_argument("--xdiv", type=int, default=9, help="knots per full row of the finest grid (default 9)")
    group.add_argument("--levels", type=int, default=1, help="number of resolutions (default 1)")
    group.add_argument("--bandwidth", type=float, default=1.5, help="bandwidth constant b (default 1.5)")
    if domain:
        group.add_argument(
            "--domain",
            default=None,
            help="knot rectangle xmin,xmax,ymin,ymax (default: unit square)",
        )


def parse_domain(text: Optional[str]) -> Domain:
    if text is None:
        return UNIT_SQUARE
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"--domain expects xmin,xmax,ymin,ymax, got {text!r}")
    try:
        return Domain(*(float(p) for p in parts))
    except ValueError:
        raise UsageError(f"--domain has a non-numeric bound: {text!r}") from None


def build_knots(
    x_divisor: int, levels: int, bandwidth: float, domain: Domain = UNIT_SQUARE
) -> tuple[KnotSet, BasisConfig]:
    if x_divisor < 2:
        raise UsageError(f"--xdiv must be >= 2, got {x_divisor}")
    if levels < 1:
        raise UsageError(f"--levels must be >= 1, got {levels}")
    if not bandwidth > 0:
        raise UsageError(f"--bandwidth must be > 0, got {bandwidth}")
    knots = multi_resolution_knots(divisor_chain(x_divisor, levels), domain)
    return knots, BasisConfig(bandwidth)


def knots_from_config(config: RunConfig, domain: Optional[Domain] = None) -> tuple[KnotSet, BasisConfig]:
    if domain is None:
        domain = parse_domain(config.get("domain"))
    return build_knots(config["xdiv"], config["levels"], config["bandwidth"], domain)


def add_matern_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("covariance")
    group.add_argument("--nu", type=float, default=1.0, help="Matérn smoothness (default 1)")
    rng = group.add_mutually_exclusive_group()
    rng.add_argument("--theta", type=float, default=None, help="Matérn range")
    rng.add_argument(
        "--calibrate",
        action="store_true",
        help="choose theta so the correlation is 0.2 at distance 1/3",
    )
    group.add_argument("--rho", type=float, default=1.0, help="Matérn sill (default 1)")


def matern_from_config(config: RunConfig) -> MaternParams:
    theta: Optional[float] = config.get("theta")
    if config.get("calibrate"):
        if theta is not None:
            raise UsageError("--theta and --calibrate are mutually exclusive")
        theta = calibrate_theta(config["nu"])
    if theta is None:
        raise UsageError("one of --theta or --calibrate is required")
    return MaternParams(nu=config["nu"], rho=config["rho"], theta=theta)


def split_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def add_covariate_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--covariate",
        action="append",
        default=None,
        metavar="NAME:DEGREE:DF",
        help="spline term for a station covariate, repeatable (default elev:3:5 lat:2:4 lon:3:6)",
    )


def covariate_specs_from_config(config: RunConfig) -> List[CovariateSpec]:
    texts = config.get("covariate")
    if not texts:
        return list(APPLICATION_SPECS)
    try:
        specs = [CovariateSpec.parse(text) for text in texts]
    except InvalidArgumentError as exc:
        raise UsageError(f"--covariate: {exc}") from None
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise UsageError(f"--covariate names must be distinct, got {names}")
    return specs


def station_domain(lon, lat) -> Domain:
    """Bounding box of the stations."""
    xmin, xmax = float(min(lon)), float(max(lon))
    ymin, ymax = float(min(lat)), float(max(lat))
    if xmax <= xmin or ymax <= ymin:
        raise UsageError("stations must span a rectangle with positive width and height")
    return Domain(xmin, xmax, ymin, ymax)
