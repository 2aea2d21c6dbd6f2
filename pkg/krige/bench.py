"""
Accuracy-versus-time experiment runner.

For every replicate of a cell the field is simulated once and the basis
built once; each method is then timed over its fit plus one prediction pass
on the truth grid, and scored by MSPE against the true field.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .errors import CapabilityError, InvalidArgumentError, KrigeError
from .estimation import FitConfig, FitMethod, fit
from .geometry import BasisConfig, build_basis, triangular_knot_grid
from .prediction import krige_predict, mspe
from .simulation import MAX_GRID_SIDE, ExperimentCell, simulate_field
from .sre_model import NoiseSpec

logger = logging.getLogger(__name__)

MAX_KNOTS = 250

RESULT_COLUMNS = [
    "nu", "theta", "sigma2", "grid", "m", "b",
    "method", "replicate", "iterations", "converged", "seconds", "mspe",
]
GROUP_COLUMNS = ["nu", "theta", "sigma2", "grid", "m", "b", "method"]

CellKey = Tuple[float, float, float, int, int, float, str, int]


@dataclass(frozen=True)
class CellResult:
    nu: float
    theta: float
    sigma2: float
    grid: int
    m: int
    b: float
    method: str
    replicate: int
    iterations: int
    converged: bool
    seconds: float
    mspe: float

    @property
    def key(self) -> CellKey:
        return (self.nu, self.theta, self.sigma2, self.grid, self.m, self.b, self.method, self.replicate)


def cell_key(cell: ExperimentCell, method: FitMethod, replicate: int) -> CellKey:
    return (
        cell.nu, cell.theta, cell.sigma2, cell.grid_side, cell.m,
        cell.bandwidth_constant, FitMethod(method).value, replicate,
    )


def _check_caps(cell: ExperimentCell) -> None:
    if cell.grid_side > MAX_GRID_SIDE:
        raise CapabilityError(f"grid {cell.grid_side}x{cell.grid_side} exceeds the desk-scale cap")
    if cell.m > MAX_KNOTS:
        raise CapabilityError(f"{cell.m} knots exceed the desk-scale cap of {MAX_KNOTS}")


def run_replicate(
    cell: ExperimentCell,
    replicate: int,
    methods: Sequence[FitMethod] = tuple(FitMethod),
    base_seed: int = 0,
    fit_cfg: Optional[FitConfig] = None,
) -> List[CellResult]:
    """Run every method on one simulated field of ``cell``.

    Replicate ``r`` uses seed ``base_seed + r``. A method that fails
    numerically yields a row with ``converged=False`` and NaN MSPE.
    """
    _check_caps(cell)
    field = simulate_field(cell.design(base_seed + replicate))
    obs = field.observations
    knots = triangular_knot_grid(cell.x_divisor)
    config = BasisConfig(cell.bandwidth_constant)
    s = build_basis(obs.locations, knots, config)
    a = build_basis(field.grid, knots, config)
    # simulated noise is fit as fine-scale variation
    noise = NoiseSpec.homoskedastic(obs.n, 0.0, 0.0)

    rows = []
    for method in methods:
        method = FitMethod(method)
        cfg = fit_cfg or FitConfig()
        cfg = FitConfig(method, cfg.max_iters, cfg.rel_tol)
        started = time.perf_counter()
        try:
            result = fit(obs, s, noise, cfg)
            pred = krige_predict(a, s, result.params, obs.values)
            seconds = time.perf_counter() - started
            row = (result.iterations, result.converged, seconds, mspe(pred, field.truth))
        except KrigeError as exc:
            seconds = time.perf_counter() - started
            logger.warning("%s failed on %s replicate %d: %s", method.value, cell, replicate, exc)
            row = (0, False, seconds, float("nan"))
        rows.append(
            CellResult(
                cell.nu, cell.theta, cell.sigma2, cell.grid_side, cell.m,
                cell.bandwidth_constant, method.value, replicate, *row,
            )
        )
    return rows


def run_cell(
    cell: ExperimentCell,
    method: FitMethod,
    replicate: int = 0,
    base_seed: int = 0,
    fit_cfg: Optional[FitConfig] = None,
) -> CellResult:
    """One method on one replicate."""
    return run_replicate(cell, replicate, [method], base_seed, fit_cfg)[0]


def run_bench(
    cells: Sequence[ExperimentCell],
    replicates: int,
    methods: Sequence[FitMethod] = tuple(FitMethod),
    base_seed: int = 0,
    workers: int = 1,
    completed: Optional[Set[CellKey]] = None,
    fit_cfg: Optional[FitConfig] = None,
    on_result: Optional[Callable[[List[CellResult]], None]] = None,
) -> List[CellResult]:
    """Run every ``(cell, replicate)`` over a joblib pool.

    Keys in ``completed`` are skipped. Results come back sorted by key, so
    the output does not depend on scheduling. ``on_result`` is called in the
    parent process with each replicate's rows as they finish.
    """
    if replicates < 1:
        raise InvalidArgumentError(f"replicates must be >= 1, got {replicates}")
    if workers < 1:
        raise InvalidArgumentError(f"workers must be >= 1, got {workers}")
    for cell in cells:
        _check_caps(cell)
    completed = completed or set()
    methods = [FitMethod(m) for m in methods]

    tasks = []
    for cell in cells:
        for r in range(replicates):
            todo = [m for m in methods if cell_key(cell, m, r) not in completed]
            if todo:
                tasks.append((cell, r, todo))
    logger.info(
        "bench: %d cells x %d replicates, %d tasks to run on %d workers",
        len(cells), replicates, len(tasks), workers,
    )

    results: List[CellResult] = []
    jobs = (delayed(run_replicate)(cell, r, todo, base_seed, fit_cfg) for cell, r, todo in tasks)
    parallel = Parallel(n_jobs=workers, return_as="generator_unordered")
    for rows in parallel(jobs):
        if on_result is not None:
            on_result(rows)
        results.extend(rows)
    results.sort(key=lambda r: r.key)
    return results


# -------------------------------------------------
# Tables
# -------------------------------------------------
def to_frame(results: Iterable[CellResult]) -> pd.DataFrame:
    rows = [asdict(r) for r in results]
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def from_frame(frame: pd.DataFrame) -> List[CellResult]:
    return [
        CellResult(
            float(r.nu), float(r.theta), float(r.sigma2), int(r.grid), int(r.m), float(r.b),
            str(r.method), int(r.replicate), int(r.iterations), bool(r.converged),
            float(r.seconds), float(r.mspe),
        )
        for r in frame.itertuples(index=False)
    ]


def summarize(results: Iterable[CellResult]) -> pd.DataFrame:
    """Quartiles of seconds and MSPE per cell and method, over replicates.

    The median of an even count is the midpoint of the two central values.
    """
    frame = results if isinstance(results, pd.DataFrame) else to_frame(results)
    if frame.empty:
        raise InvalidArgumentError("nothing to summarize")
    grouped = frame.groupby(GROUP_COLUMNS, sort=True)
    stats: Dict[str, pd.Series] = {}
    for column in ("seconds", "mspe"):
        stats[f"{column}_q1"] = grouped[column].quantile(0.25)
        stats[f"{column}_median"] = grouped[column].median()
        stats[f"{column}_q3"] = grouped[column].quantile(0.75)
    stats["count"] = grouped.size()
    stats["converged"] = grouped["converged"].sum().astype(int)
    return pd.DataFrame(stats).reset_index()


def cell_filter(expression: str) -> Callable[[ExperimentCell], bool]:
    """Predicate from ``"nu=1,sigma2=0.25,m=77"``; keys are nu, theta, sigma2, grid, m, xdiv, b."""
    getters = {
        "nu": lambda c: c.nu,
        "theta": lambda c: c.theta,
        "sigma2": lambda c: c.sigma2,
        "grid": lambda c: c.grid_side,
        "m": lambda c: c.m,
        "xdiv": lambda c: c.x_divisor,
        "b": lambda c: c.bandwidth_constant,
    }
    wanted = []
    for term in filter(None, (t.strip() for t in expression.split(","))):
        name, sep, value = term.partition("=")
        name = name.strip()
        if not sep or name not in getters:
            raise InvalidArgumentError(f"bad filter term {term!r}")
        try:
            wanted.append((getters[name], float(value)))
        except ValueError:
            raise InvalidArgumentError(f"bad filter value in {term!r}") from None
    return lambda cell: all(np.isclose(get(cell), v) for get, v in wanted)
