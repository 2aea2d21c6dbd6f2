"""
Covariate detrending before kriging.

The mean structure ``X alpha`` (a shared intercept plus one regression
spline per covariate) is removed by projecting onto the orthogonal
complement of ``span(X)``: with ``X = Q_X R``, the last ``n - p`` columns
``Q_X2`` of ``Q_X`` give ``Q_X2'y``, free of ``alpha``. The basis is
projected the same way before the reduced-basis fit. After prediction the
least-squares covariate effects are added back.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

from .errors import CollinearCovariatesError, InputFormatError, InvalidArgumentError
from .linalg import as_dense

logger = logging.getLogger(__name__)

# Site covariates may extend the training range by this fraction on each side.
EXTRAPOLATION_MARGIN = 0.10
RANK_TOL = 1e-10


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CovariateSpec:
    """Regression spline for one covariate: ``df`` columns of a degree-``degree`` spline."""

    name: str
    degree: int = 3
    df: int = 4

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise InvalidArgumentError(f"{self.name}: degree must be >= 1, got {self.degree}")
        if self.df < self.degree:
            raise InvalidArgumentError(
                f"{self.name}: df ({self.df}) must be at least the degree ({self.degree})"
            )

    @property
    def n_knots(self) -> int:
        return self.df - self.degree

    @classmethod
    def parse(cls, text: str) -> "CovariateSpec":
        """``name:degree:df``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise InvalidArgumentError(f"covariate spec {text!r} is not name:degree:df")
        try:
            return cls(parts[0].strip(), int(parts[1]), int(parts[2]))
        except ValueError as exc:
            raise InvalidArgumentError(f"covariate spec {text!r}: {exc}") from exc


# Elevation, latitude and longitude terms of the temperature application.
APPLICATION_SPECS = (
    CovariateSpec("elev", degree=3, df=5),
    CovariateSpec("lat", degree=2, df=4),
    CovariateSpec("lon", degree=3, df=6),
)


@dataclass(frozen=True)
class SplineBasis:
    """Truncated-power spline fitted to one covariate.

    Values are standardized with the training mean and standard deviation;
    interior knots sit at equally spaced quantiles of the standardized
    training values. ``lo``/``hi`` keep the raw training range.
    """

    spec: CovariateSpec
    center: float
    scale: float
    knots: Tuple[float, ...]
    lo: float
    hi: float

    @classmethod
    def fit(cls, values, spec: CovariateSpec) -> "SplineBasis":
        v = np.asarray(values, dtype=float).reshape(-1)
        if v.shape[0] <= spec.df:
            raise InvalidArgumentError(f"{spec.name}: need more than {spec.df} values, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError(f"{spec.name}: covariate values must be finite")
        scale = float(np.std(v))
        if scale == 0:
            raise CollinearCovariatesError("constant covariate", [spec.name])
        center = float(np.mean(v))
        z = (v - center) / scale
        probs = np.arange(1, spec.n_knots + 1) / (spec.n_knots + 1)
        knots = tuple(float(k) for k in np.quantile(z, probs))
        return cls(spec, center, scale, knots, float(v.min()), float(v.max()))

    @property
    def columns(self) -> List[str]:
        return [f"{self.spec.name}[{j}]" for j in range(self.spec.df)]

    def evaluate(self, values) -> np.ndarray:
        """``n x df`` columns ``z, ..., z^degree, (z - k_1)_+^degree, ...``."""
        z = (np.asarray(values, dtype=float).reshape(-1) - self.center) / self.scale
        degree = self.spec.degree
        cols = [z**p for p in range(1, degree + 1)]
        cols += [np.clip(z - k, 0.0, None) ** degree for k in self.knots]
        return np.column_stack(cols) if cols else np.zeros((z.shape[0], 0))

    def outside_range(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float).reshape(-1)
        margin = EXTRAPOLATION_MARGIN * (self.hi - self.lo)
        return (v < self.lo - margin) | (v > self.hi + margin)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.spec.name,
            "degree": self.spec.degree,
            "df": self.spec.df,
            "center": self.center,
            "scale": self.scale,
            "knots": list(self.knots),
            "lo": self.lo,
            "hi": self.hi,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SplineBasis":
        spec = CovariateSpec(str(data["name"]), int(data["degree"]), int(data["df"]))
        return cls(
            spec,
            float(data["center"]),
            float(data["scale"]),
            tuple(float(k) for k in data["knots"]),
            float(data["lo"]),
            float(data["hi"]),
        )


def spline_basis(values, spec: CovariateSpec) -> np.ndarray:
    """Spline columns of ``values`` under ``spec``, fitted to the same values."""
    return SplineBasis.fit(values, spec).evaluate(values)


@dataclass(frozen=True, eq=False)
class AddBackResult:
    predictions: np.ndarray
    covariate_effect: np.ndarray
    extrapolated: np.ndarray

    @property
    def n_extrapolated(self) -> int:
        return int(np.count_nonzero(self.extrapolated))


@dataclass(frozen=True, eq=False)
class DetrendModel:
    """Covariate design, its Householder QR and the least-squares effects.

    Models loaded from JSON carry no QR; they can add effects back but not
    project new data.
    """

    splines: Tuple[SplineBasis, ...]
    alpha: np.ndarray
    n: int
    householder: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return 1 + sum(s.spec.df for s in self.splines)

    @property
    def columns(self) -> List[str]:
        return ["intercept"] + [c for s in self.splines for c in s.columns]

    def design(self, covariates: Mapping[str, Any]) -> np.ndarray:
        """``[1, spline(cov_1), spline(cov_2), ...]`` at new locations."""
        blocks = [s.evaluate(_covariate(covariates, s.spec.name)) for s in self.splines]
        n = blocks[0].shape[0] if blocks else _row_count(covariates)
        return np.column_stack([np.ones(n)] + blocks)

    def _apply_qt(self, c: np.ndarray) -> np.ndarray:
        if self.householder is None:
            raise InvalidArgumentError("this detrend model has no QR factorization")
        h, tau = self.householder
        c = np.asfortranarray(np.array(c, dtype=float).reshape(self.n, -1))
        (ormqr,) = lapack.get_lapack_funcs(("ormqr",), (h,))
        out, _, info = ormqr("L", "T", h, tau, c, max(1, 64 * c.shape[1]))
        if info != 0:
            raise InvalidArgumentError(f"ormqr failed with info={info}")
        return out

    def project(self, values) -> np.ndarray:
        """``Q_X2'y``, of length ``n - p``."""
        v = np.asarray(values, dtype=float).reshape(-1)
        if v.shape[0] != self.n:
            raise InvalidArgumentError(f"expected {self.n} values, got {v.shape[0]}")
        return self._apply_qt(v)[self.p :, 0]

    def project_basis(self, s) -> np.ndarray:
        """``Q_X2'S`` as a dense ``(n - p) x m`` matrix."""
        s = as_dense(s)
        if s.shape[0] != self.n:
            raise InvalidArgumentError(f"basis has {s.shape[0]} rows, expected {self.n}")
        return self._apply_qt(s)[self.p :, :]

    def add_back(self, kriging_preds, site_covariates: Mapping[str, Any]) -> AddBackResult:
        """``X(sites) alpha + kriging_preds``.

        Sites whose covariates fall more than 10% of the training range
        outside it are flagged and warned about, not rejected.
        """
        preds = np.asarray(kriging_preds, dtype=float).reshape(-1)
        x0 = self.design(site_covariates)
        if x0.shape[0] != preds.shape[0]:
            raise InvalidArgumentError(f"{preds.shape[0]} predictions for {x0.shape[0]} sites")
        outside = np.zeros(preds.shape[0], dtype=bool)
        for spline in self.splines:
            outside |= spline.outside_range(_covariate(site_covariates, spline.spec.name))
        if outside.any():
            message = f"{int(outside.sum())} sites extrapolate covariates beyond the training range"
            logger.warning(message)
            warnings.warn(message, ExtrapolationWarning, stacklevel=2)
        effect = x0 @ self.alpha
        return AddBackResult(effect + preds, effect, outside)

    # -------------------------------------------------
    # Persistence
    # -------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "alpha": [float(a) for a in self.alpha],
            "splines": [s.to_dict() for s in self.splines],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DetrendModel":
        splines = tuple(SplineBasis.from_dict(d) for d in data["splines"])
        alpha = np.asarray(data["alpha"], dtype=float)
        model = cls(splines, alpha, int(data["n"]))
        if alpha.shape[0] != model.p:
            raise InvalidArgumentError(f"model has {alpha.shape[0]} coefficients for {model.p} columns")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DetrendModel":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls.from_dict(data)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputFormatError(f"not a detrend model: {exc}", str(path)) from exc


def _covariate(covariates: Mapping[str, Any], name: str) -> np.ndarray:
    try:
        return np.asarray(covariates[name], dtype=float).reshape(-1)
    except KeyError:
        raise InvalidArgumentError(f"missing covariate {name!r}") from None


def _row_count(covariates: Mapping[str, Any]) -> int:
    """Rows of a covariate table: a DataFrame or a mapping of columns."""
    shape = getattr(covariates, "shape", None)
    if shape is not None:
        return int(shape[0])
    first = next(iter(covariates.values()), None)
    return 0 if first is None else int(np.asarray(first).reshape(-1).shape[0])


def _check_rank(x: np.ndarray, columns: Sequence[str]) -> None:
    _, r, piv = sla.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * diag[0])) if diag.size else 0
    if rank < x.shape[1]:
        raise CollinearCovariatesError(
            "covariate design is rank deficient", [columns[j] for j in piv[rank:]]
        )


def fit_detrend(y, covariates: Mapping[str, Any], specs: Sequence[CovariateSpec]) -> DetrendModel:
    """Build ``X`` from ``specs``, factor it and estimate ``alpha`` by least squares.

    Raises:
        CollinearCovariatesError: ``X`` is rank deficient; the message names
            the offending columns.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.shape[0]
    splines = tuple(SplineBasis.fit(_covariate(covariates, s.name), s) for s in specs)
    blocks = [s.evaluate(_covariate(covariates, s.spec.name)) for s in splines]
    x = np.column_stack([np.ones(n)] + blocks)
    p = x.shape[1]
    if p >= n:
        raise InvalidArgumentError(f"need more observations ({n}) than covariate columns ({p})")
    columns = ["intercept"] + [c for s in splines for c in s.columns]
    _check_rank(x, columns)

    (h, tau), r = sla.qr(x, mode="raw")
    model = DetrendModel(splines, np.zeros(p), n, (h, tau))
    qty = model._apply_qt(y)[:, 0]
    alpha = sla.solve_triangular(r[:p, :p], qty[:p], lower=False)
    logger.info("detrend: n=%d p=%d residual ss=%.6g", n, p, float(qty[p:] @ qty[p:]))
    return DetrendModel(splines, alpha, n, (h, tau))


def detrend(
    y, covariates: Mapping[str, Any], specs: Sequence[CovariateSpec]
) -> Tuple[np.ndarray, Callable[[Any], np.ndarray], DetrendModel]:
    """Detrended data ``Q_X2'y``, the matching basis projection, and the model."""
    model = fit_detrend(y, covariates, specs)
    return model.project(y), model.project_basis, model
