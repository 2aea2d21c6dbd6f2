"""Remove spline covariate effects from station data."""

from __future__ import annotations

import argparse
import logging

from krige.detrend import fit_detrend
from krige.formats import read_stations, write_detrended
from ui.components import render_header, render_written

from state import RunConfig

from .base import BaseCommand, add_covariate_arguments, covariate_specs_from_config

logger = logging.getLogger(__name__)


class DetrendCommand(BaseCommand):
    id = "detrend"
    label = "Detrend stations"
    description = "project station values onto the complement of the covariate design"
    input_options = ("stations",)

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--stations", help="station CSV (lon,lat,elev,value)")
        add_covariate_arguments(parser)
        parser.add_argument("--out", help="detrended data CSV (row,value)")
        parser.add_argument("--model-out", help="fitted covariate model as JSON")

    def run(self, config: RunConfig) -> int:
        out = self.require(config, "out")
        specs = covariate_specs_from_config(config)
        frame = read_stations(self.require(config, "stations"), [s.name for s in specs])
        render_header(self.label, {**config.options, "n": len(frame)})

        model = fit_detrend(frame["value"].to_numpy(), frame, specs)
        write_detrended(out, model.project(frame["value"].to_numpy()))
        written = [out]
        if config.get("model_out"):
            model.save(config["model_out"])
            written.append(config["model_out"])
        print(f"{model.p} covariate columns: {', '.join(model.columns)}")
        render_written(written)
        return 0
