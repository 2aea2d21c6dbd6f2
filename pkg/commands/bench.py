"""Accuracy-versus-time benchmark over the simulation design."""

from __future__ import annotations

import argparse
import logging

from krige.bench import cell_filter, run_bench, summarize
from krige.errors import CapabilityError, InvalidArgumentError, UsageError
from krige.estimation import FitConfig, FitMethod
from krige.formats import write_table
from krige.simulation import Scale, default_replicates, paper_design_cells
from ui.components import render_bench_summary, render_header, render_written

from state import BenchLedger, RunConfig

from .base import BaseCommand, split_list

logger = logging.getLogger(__name__)


class BenchCommand(BaseCommand):
    id = "bench"
    label = "Benchmark"
    description = "time and score every fitting method over the simulation design"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--scale", choices=[s.value for s in Scale], default=Scale.DESK.value)
        parser.add_argument("--replicates", type=int, default=None, help="replicates per cell (default 20)")
        parser.add_argument("--only", default=None, help='cell filter, e.g. "nu=1,sigma2=0.25,m=77"')
        parser.add_argument(
            "--methods",
            default=",".join(m.value for m in FitMethod),
            help="comma-separated fitting methods (default all)",
        )
        parser.add_argument("--seed", type=int, default=0, help="base seed; replicate r uses seed + r")
        parser.add_argument("--workers", type=int, default=None, help="worker processes (default $KRIGE_WORKERS or 1)")
        parser.add_argument("--serial-timing", action="store_true", help="run on one worker for steadier timings")
        parser.add_argument("--max-iters", type=int, default=1000)
        parser.add_argument("--rel-tol", type=float, default=1e-6)
        parser.add_argument("--resume", action="store_true", help="skip rows already in --out")
        parser.add_argument("--out", help="per-replicate results CSV")
        parser.add_argument("--summary", help="per-cell quartile summary CSV")

    def run(self, config: RunConfig) -> int:
        out = self.require(config, "out")
        scale = Scale(config["scale"])
        if scale is not Scale.DESK:
            raise CapabilityError("--scale paper needs 200x200 grids and 100 replicates; only desk scale runs here")
        replicates = config.get("replicates") or default_replicates(scale)
        if replicates < 1:
            raise UsageError(f"--replicates must be >= 1, got {replicates}")
        if config["seed"] < 0:
            raise UsageError(f"--seed must be >= 0, got {config['seed']}")
        try:
            methods = [FitMethod.parse(text) for text in split_list(config["methods"])]
        except InvalidArgumentError as exc:
            raise UsageError(f"--methods: {exc}") from None
        if not methods:
            raise UsageError("--methods lists no method")

        cells = paper_design_cells(scale)
        if config.get("only"):
            try:
                keep = cell_filter(config["only"])
            except InvalidArgumentError as exc:
                raise UsageError(f"--only: {exc}") from None
            cells = [cell for cell in cells if keep(cell)]
            if not cells:
                raise UsageError(f"--only {config['only']!r} matches no cell")
        workers = 1 if config.get("serial_timing") else config.workers
        render_header(
            self.label,
            {**config.options, "cells": len(cells), "replicates": replicates, "workers": workers},
        )

        ledger = BenchLedger(out, resume=config.get("resume", False))
        run_bench(
            cells,
            replicates,
            methods,
            base_seed=config["seed"],
            workers=workers,
            completed=ledger.completed,
            fit_cfg=FitConfig(FitMethod.RBK, config["max_iters"], config["rel_tol"]),
            on_result=ledger.append,
        )
        rows = ledger.finalize()
        written = [out]
        if rows:
            summary = summarize(rows)
            if config.get("summary"):
                write_table(config["summary"], summary)
                written.append(config["summary"])
            render_bench_summary(summary)
        render_written(written)
        return 0
