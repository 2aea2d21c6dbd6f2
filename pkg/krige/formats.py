"""
CSV and record files shared by the command line.

All tables are comma-separated with a header row, '.' decimals and LF line
endings; floats are written with 17 significant digits so a read-write
cycle is lossless. Parse errors are raised as ``InputFormatError`` naming
the file and line.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import InputFormatError
from .geometry import KnotSet, ObservationSet
from .linalg import read_triplets, write_triplets

if TYPE_CHECKING:
    from .prediction import SelectionReport

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

OBS_COLUMNS = ["x", "y", "value"]
TRUTH_COLUMNS = ["x", "y", "f"]
PRED_COLUMNS = ["x", "y", "pred", "se"]
KNOT_COLUMNS = ["level", "x", "y"]
PROFILE_COLUMNS = ["distance", "correlation"]
FIT_COLUMNS = ["method", "m", "b", "iterations", "converged", "rho_k", "sigma2_delta", "seconds"]


def read_table(path, columns: Sequence[str], numeric: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Read a CSV that must contain ``columns``; ``numeric`` ones must parse as finite floats."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise InputFormatError("file not found", str(path)) from None
    except pd.errors.EmptyDataError:
        raise InputFormatError("empty file, expected a header row", str(path), 1) from None
    except pd.errors.ParserError as exc:
        raise InputFormatError(f"malformed CSV: {exc}", str(path)) from exc

    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InputFormatError(f"missing column(s) {', '.join(missing)}", str(path), 1)

    for column in numeric if numeric is not None else columns:
        parsed = pd.to_numeric(frame[column].str.strip(), errors="coerce")
        bad = ~np.isfinite(parsed.to_numpy(dtype=float))
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            value = frame[column].iloc[row]
            raise InputFormatError(f"column {column!r}: not a finite number: {value!r}", str(path), row + 2)
        frame[column] = parsed.astype(float)
    return frame


def write_table(path, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


# -------------------------------------------------
# Observations, truth, predictions
# -------------------------------------------------
def read_observations(path) -> ObservationSet:
    frame = read_table(path, OBS_COLUMNS)
    if frame.empty:
        raise InputFormatError("no observations", str(path), 2)
    return ObservationSet(frame[["x", "y"]].to_numpy(), frame["value"].to_numpy())


def write_observations(path, obs: ObservationSet) -> None:
    frame = pd.DataFrame(
        {"x": obs.locations[:, 0], "y": obs.locations[:, 1], "value": obs.values}
    )
    write_table(path, frame)


def read_sites(path) -> np.ndarray:
    """Prediction sites from any CSV with ``x,y`` columns; may be header-only."""
    frame = read_table(path, ["x", "y"])
    return frame[["x", "y"]].to_numpy(dtype=float).reshape(-1, 2)


def write_truth(path, grid: np.ndarray, truth: np.ndarray) -> None:
    write_table(path, pd.DataFrame({"x": grid[:, 0], "y": grid[:, 1], "f": truth}))


def read_truth(path) -> Tuple[np.ndarray, np.ndarray]:
    frame = read_table(path, TRUTH_COLUMNS)
    return frame[["x", "y"]].to_numpy(), frame["f"].to_numpy()


def write_predictions(path, sites: np.ndarray, predictions, std_errors) -> None:
    sites = np.asarray(sites, dtype=float).reshape(-1, 2)
    frame = pd.DataFrame(
        {"x": sites[:, 0], "y": sites[:, 1], "pred": predictions, "se": std_errors},
        columns=PRED_COLUMNS,
    )
    write_table(path, frame)


def read_predictions(path) -> pd.DataFrame:
    return read_table(path, PRED_COLUMNS)


# -------------------------------------------------
# Knots, matrices, profiles
# -------------------------------------------------
def write_knots(path, knots: KnotSet) -> None:
    frame = pd.DataFrame(
        {"level": knots.level_of, "x": knots.coords[:, 0], "y": knots.coords[:, 1]}
    )
    write_table(path, frame)


def read_knots(path) -> KnotSet:
    frame = read_table(path, KNOT_COLUMNS)
    if frame.empty:
        raise InputFormatError("no knots", str(path), 2)
    levels = frame["level"].to_numpy()
    if np.any(levels != np.round(levels)) or np.any(levels < 1):
        raise InputFormatError("levels must be positive integers", str(path))
    return KnotSet(frame[["x", "y"]].to_numpy(), levels.astype(int))


def write_matrix_triplets(path, matrix) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        write_triplets(matrix, handle)


def read_matrix_triplets(path):
    with open(path, encoding="utf-8") as handle:
        try:
            return read_triplets(handle)
        except ValueError as exc:
            raise InputFormatError(str(exc), str(path)) from exc


def write_dense_matrix(path, matrix: np.ndarray) -> None:
    """Headerless square matrix, one row per line."""
    np.savetxt(path, np.asarray(matrix, dtype=float), delimiter=",", fmt=FLOAT_FORMAT)


def read_dense_matrix(path) -> np.ndarray:
    path = Path(path)
    try:
        frame = pd.read_csv(path, header=None, dtype=float)
    except FileNotFoundError:
        raise InputFormatError("file not found", str(path)) from None
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputFormatError(f"not a numeric matrix: {exc}", str(path)) from exc
    matrix = frame.to_numpy()
    if matrix.shape[0] != matrix.shape[1]:
        raise InputFormatError(f"matrix is {matrix.shape[0]}x{matrix.shape[1]}, not square", str(path))
    if not np.all(np.isfinite(matrix)):
        raise InputFormatError("matrix has non-finite entries", str(path))
    return matrix


def write_profile(path, pairs: Iterable[Tuple[float, float]]) -> None:
    frame = pd.DataFrame(list(pairs), columns=PROFILE_COLUMNS)
    write_table(path, frame)


# -------------------------------------------------
# Fit records
# -------------------------------------------------
@dataclass(frozen=True)
class FitRecord:
    method: str
    m: int
    b: float
    iterations: int
    converged: bool
    rho_k: float
    sigma2_delta: float
    seconds: float


def k_sidecar(path) -> Path:
    """``fit.csv`` -> ``fit.K.csv``."""
    path = Path(path)
    return path.with_name(f"{path.stem}.K.csv")


def write_fit_record(path, record: FitRecord, k: Optional[np.ndarray] = None) -> None:
    frame = pd.DataFrame([record.__dict__], columns=FIT_COLUMNS)
    frame["converged"] = frame["converged"].map({True: "true", False: "false"})
    write_table(path, frame)
    if k is not None:
        write_dense_matrix(k_sidecar(path), k)


def read_fit_record(path) -> Tuple[FitRecord, Optional[np.ndarray]]:
    """The record and, for ``em-full`` records, the full K from the ``.K.csv`` sidecar."""
    numeric = ["m", "b", "iterations", "rho_k", "sigma2_delta", "seconds"]
    frame = read_table(path, FIT_COLUMNS, numeric)
    if len(frame) != 1:
        raise InputFormatError(f"expected exactly one record, found {len(frame)}", str(path))
    row = frame.iloc[0]
    converged = str(row["converged"]).strip().lower()
    if converged not in ("true", "false"):
        raise InputFormatError(f"converged must be true or false, got {converged!r}", str(path), 2)
    record = FitRecord(
        method=str(row["method"]).strip(),
        m=int(row["m"]),
        b=float(row["b"]),
        iterations=int(row["iterations"]),
        converged=converged == "true",
        rho_k=float(row["rho_k"]),
        sigma2_delta=float(row["sigma2_delta"]),
        seconds=float(row["seconds"]),
    )
    sidecar = k_sidecar(path)
    k = None
    if record.method == "em-full":
        if not sidecar.exists():
            raise InputFormatError("em-full record without its K sidecar", str(sidecar))
        k = read_dense_matrix(sidecar)
    return record, k


# -------------------------------------------------
# Stations
# -------------------------------------------------
def read_stations(path, covariates: Sequence[str] = ("lon", "lat", "elev"), need_value: bool = True) -> pd.DataFrame:
    """Station table with ``lon,lat`` plus the named covariates (and ``value``).

    Extra columns are dropped with a warning.
    """
    required = list(dict.fromkeys(["lon", "lat", *covariates] + (["value"] if need_value else [])))
    frame = read_table(path, required)
    extra = [c for c in frame.columns if c not in required]
    if extra:
        message = f"{path}: ignoring column(s) {', '.join(extra)}"
        logger.warning(message)
        warnings.warn(message, UserWarning, stacklevel=2)
    return frame[required].reset_index(drop=True)


# -------------------------------------------------
# Bench results
# -------------------------------------------------
def read_bench_results(path, columns: List[str]) -> pd.DataFrame:
    numeric = [c for c in columns if c not in ("method", "converged", "mspe")]
    frame = read_table(path, columns, numeric)
    frame["mspe"] = pd.to_numeric(frame["mspe"].str.strip(), errors="coerce")
    frame["converged"] = frame["converged"].str.strip().str.lower().map({"true": True, "false": False})
    if frame["converged"].isna().any():
        raise InputFormatError("converged must be true or false", str(path))
    return frame


def write_bench_results(path, frame: pd.DataFrame, append: bool = False) -> None:
    out = frame.copy()
    if "converged" in out.columns:
        out["converged"] = out["converged"].map({True: "true", False: "false"})
    out.to_csv(
        path,
        index=False,
        float_format=FLOAT_FORMAT,
        lineterminator="\n",
        mode="a" if append else "w",
        header=not append,
    )


# -------------------------------------------------
# Detrended data and selection reports
# -------------------------------------------------
DETRENDED_COLUMNS = ["row", "value"]
SELECTION_COLUMNS = ["index", "m", "b", "value", "rho_k", "sigma2_delta", "converged", "selected", "error"]


def write_detrended(path, values) -> None:
    """``row,value`` for the projected data ``Q_X2'y`` (length ``n - p``)."""
    values = np.asarray(values, dtype=float).reshape(-1)
    write_table(path, pd.DataFrame({"row": np.arange(values.shape[0]), "value": values}, columns=DETRENDED_COLUMNS))


def write_selection_report(path, report: "SelectionReport") -> None:
    rows = []
    for cand in report.candidates:
        fitted = cand.fit
        rows.append(
            {
                "index": cand.index,
                "m": cand.m,
                "b": cand.bandwidth_constant,
                "value": cand.value,
                "rho_k": fitted.rho_k if fitted else float("nan"),
                "sigma2_delta": fitted.sigma2_delta if fitted else float("nan"),
                "converged": "true" if fitted and fitted.converged else "false",
                "selected": "true" if cand.index == report.winner else "false",
                "error": cand.error,
            }
        )
    write_table(path, pd.DataFrame(rows, columns=SELECTION_COLUMNS))
