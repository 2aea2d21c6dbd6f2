"""
Console rendering helpers for the kriging command line.

Commands print human-readable summaries to stdout through these helpers;
diagnostics go to the log on stderr and data go to files, so stdout stays
a short report of what was done.
"""

from __future__ import annotations

import sys
from typing import Any, Iterable, Mapping, Optional, TextIO

import pandas as pd

from krige.estimation import FitResult
from krige.prediction import SelectionReport


def _out(stream: Optional[TextIO]) -> TextIO:
    return stream if stream is not None else sys.stdout


def render_header(label: str, options: Mapping[str, Any], stream: Optional[TextIO] = None) -> None:
    """Title line plus the non-empty options of the run."""
    out = _out(stream)
    print(f"== {label} ==", file=out)
    for key in sorted(options):
        value = options[key]
        if value is None or value is False or value == []:
            continue
        print(f"  {key.replace('_', '-')}: {value}", file=out)


def render_fit_summary(result: FitResult, m: int, b: float, stream: Optional[TextIO] = None) -> None:
    out = _out(stream)
    status = "converged" if result.converged else "NOT converged"
    print(f"method {result.method.value}: m={m} b={b:g}, {result.iterations} iterations, {status}", file=out)
    label = "rho_k" if result.method.value != "em-full" else "mean diag K"
    print(f"  {label} = {result.rho_k:.6g}", file=out)
    print(f"  sigma2_delta = {result.sigma2_delta:.6g}", file=out)
    if result.loglik_trace:
        print(f"  final loglik = {result.loglik_trace[-1]:.6f}", file=out)
    if result.repairs:
        print(f"  K repaired to positive definite {result.repairs} times", file=out)
    print(f"  estimation took {result.wall_seconds:.3f}s", file=out)


def render_selection_report(report: SelectionReport, stream: Optional[TextIO] = None) -> None:
    out = _out(stream)
    print(f"criterion: {report.criterion.value}", file=out)
    for cand in report.candidates:
        mark = "*" if cand.index == report.winner else " "
        if cand.ok:
            print(f" {mark} [{cand.index}] m={cand.m:<4d} b={cand.bandwidth_constant:<5g} value={cand.value:.6g}", file=out)
        else:
            print(f" {mark} [{cand.index}] m={cand.m:<4d} b={cand.bandwidth_constant:<5g} failed: {cand.error}", file=out)
    best = report.best
    print(f"selected candidate {best.index} (m={best.m}, b={best.bandwidth_constant:g})", file=out)


def render_bench_summary(summary: pd.DataFrame, stream: Optional[TextIO] = None) -> None:
    """Median seconds and MSPE per method, pooled over cells."""
    out = _out(stream)
    if summary.empty:
        print("no bench results", file=out)
        return
    pooled = summary.groupby("method")[["seconds_median", "mspe_median", "count"]].agg(
        {"seconds_median": "median", "mspe_median": "median", "count": "sum"}
    )
    print(pooled.to_string(float_format=lambda v: f"{v:.4g}"), file=out)


def render_written(paths: Iterable[str], stream: Optional[TextIO] = None) -> None:
    out = _out(stream)
    for path in paths:
        print(f"wrote {path}", file=out)
