"""
Kriging predictions, standard errors and basis selection.

With ``P = K^-1 + S'D^-1 S`` the SRE predictor at sites with basis ``A`` is

    f(s0) = A P^-1 S'D^-1 y

and its standard error is the square root of the diagonal of

    A K A' + sd2 V_delta(s0) - A P^-1 S'D^-1 S K A'.

Only m x m systems are solved. At observed sites the predictor smooths
rather than interpolates.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy import sparse

from .covariance import MaternParams, cov_matrix
from .errors import (
    InvalidArgumentError,
    KrigeError,
    NoModelError,
    NotPositiveDefiniteError,
    NumericalInconsistencyError,
)
from .estimation import FitConfig, FitMethod, FitResult, fit_rbk
from .geometry import (
    BasisConfig,
    KnotSet,
    Observations,
    ObservationSet,
    as_points,
    build_basis,
    response,
)
from .linalg import SMWInverse, WoodburyPrecision, as_dense, chol_solve, cholesky, spmv
from .sre_model import NoiseSpec, SREParams, profiled_sigma2

logger = logging.getLogger(__name__)

SE_TOLERANCE = 1e-10
# Rows of A processed at once when accumulating SE diagonals.
SE_BLOCK_ROWS = 2048


@dataclass(frozen=True, eq=False)
class KrigingResult:
    sites: np.ndarray
    predictions: np.ndarray
    std_errors: np.ndarray

    def __post_init__(self) -> None:
        if not (self.sites.shape[0] == self.predictions.shape[0] == self.std_errors.shape[0]):
            raise InvalidArgumentError("sites, predictions and std_errors differ in length")

    @property
    def mean_se(self) -> float:
        return float(np.mean(self.std_errors)) if self.std_errors.size else float("nan")


def _dims(a, s, params: SREParams) -> int:
    m = s.shape[1]
    if a.shape[1] != m:
        raise InvalidArgumentError(f"A has {a.shape[1]} columns, S has {m}")
    if params.noise.n != s.shape[0]:
        raise InvalidArgumentError(
            f"noise weights have length {params.noise.n}, S has {s.shape[0]} rows"
        )
    return m


def _posterior_weights(k: np.ndarray, s, d: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``P^-1 S'D^-1 y``; falls back to ``K S'Sigma^-1 y`` when K is singular."""
    try:
        return WoodburyPrecision.build(k, s, d).gain(y)
    except NotPositiveDefiniteError:
        logger.debug("K not invertible, using the square-root Woodbury form")
        return k @ SMWInverse.build(k, s, d).st_apply(y)


def krige_predict(a, s, params: SREParams, y) -> np.ndarray:
    """Kriging predictor ``A (S'D^-1 S + K^-1)^-1 S'D^-1 y``."""
    m = _dims(a, s, params)
    y = response(y)
    if y.shape[0] != s.shape[0]:
        raise InvalidArgumentError(f"y has length {y.shape[0]}, S has {s.shape[0]} rows")
    k = params.kform.matrix(m)
    weights = _posterior_weights(k, s, params.noise.d(), y)
    return spmv(a, weights)


def _row_quadratic(a, c: np.ndarray) -> np.ndarray:
    """``diag(A C A')`` accumulated over row blocks of ``A``."""
    a = sparse.csr_matrix(a) if sparse.issparse(a) else np.asarray(a, dtype=float)
    n_rows = a.shape[0]
    out = np.empty(n_rows)
    for start in range(0, n_rows, SE_BLOCK_ROWS):
        block = a[start : start + SE_BLOCK_ROWS]
        ac = as_dense(block @ c)
        dense = as_dense(block)
        out[start : start + SE_BLOCK_ROWS] = np.sum(ac * dense, axis=1)
    return out


def krige_se(a, s, params: SREParams, v_delta_at_sites) -> np.ndarray:
    """Kriging standard errors at the rows of ``A``.

    Radicands that are negative by less than ``1e-10 * (mean diag K +
    sigma2_delta)`` are clamped to zero.

    Raises:
        NumericalInconsistencyError: a radicand is negative beyond that.
    """
    m = _dims(a, s, params)
    v0 = np.asarray(v_delta_at_sites, dtype=float).reshape(-1)
    if v0.shape[0] != a.shape[0]:
        raise InvalidArgumentError(f"V_delta(s0) has length {v0.shape[0]}, A has {a.shape[0]} rows")
    if np.any(~(v0 > 0)):
        raise InvalidArgumentError("V_delta(s0) entries must be > 0")

    k = params.kform.matrix(m)
    smw = SMWInverse.build(k, s, params.noise.d())
    # K - K S'Sigma^-1 S K equals K - P^-1 S'D^-1 S K
    shrink = k @ smw.st_inverse_s() @ k
    variance = _row_quadratic(a, k) - _row_quadratic(a, shrink)
    variance = variance + params.noise.sigma2_delta * v0

    tol = SE_TOLERANCE * (params.kform.mean_diagonal() + params.noise.sigma2_delta)
    worst = float(variance.min()) if variance.size else 0.0
    if worst < -tol:
        raise NumericalInconsistencyError(f"negative kriging variance {worst:.3g}")
    return np.sqrt(np.clip(variance, 0.0, None))


def krige(a, s, params: SREParams, y, sites, v_delta_at_sites=None) -> KrigingResult:
    """Predictions and standard errors at ``sites`` (rows of ``A``)."""
    sites = as_points(sites)
    if v_delta_at_sites is None:
        v_delta_at_sites = np.ones(sites.shape[0])
    return KrigingResult(
        sites=sites,
        predictions=krige_predict(a, s, params, y),
        std_errors=krige_se(a, s, params, v_delta_at_sites),
    )


def oracle_krige(cov: MaternParams, obs: ObservationSet, sites, sigma2: float) -> np.ndarray:
    """Zero-mean BLUP ``C(s0, s) (C(s, s) + sigma2 I)^-1 y`` by dense Cholesky."""
    if sigma2 < 0:
        raise InvalidArgumentError(f"sigma2 must be >= 0, got {sigma2}")
    c_ss = cov_matrix(cov, obs.locations) + sigma2 * np.eye(obs.n)
    factor = cholesky(c_ss)
    c_0s = cov_matrix(cov, as_points(sites), obs.locations)
    return c_0s @ chol_solve(factor, obs.values)


def mspe(predicted, truth) -> float:
    """Mean squared prediction error."""
    p = np.asarray(predicted, dtype=float).reshape(-1)
    t = np.asarray(truth, dtype=float).reshape(-1)
    if p.shape != t.shape:
        raise InvalidArgumentError(f"length mismatch: {p.shape[0]} predictions, {t.shape[0]} truths")
    if p.size == 0:
        raise InvalidArgumentError("mspe needs at least one value")
    return float(np.mean((p - t) ** 2))


# -------------------------------------------------
# Basis selection
# -------------------------------------------------
class SelectionCriterion(str, enum.Enum):
    MEAN_KRIG_SE = "mean-se"
    MIN_SIGMA2 = "min-sigma2"

    @classmethod
    def parse(cls, value: str) -> "SelectionCriterion":
        try:
            return cls(value.lower().replace("_", "-"))
        except ValueError as exc:
            names = ", ".join(c.value for c in cls)
            raise InvalidArgumentError(f"unknown criterion {value!r} (expected one of {names})") from exc


class Projector(Protocol):
    """Maps data and basis onto the residual space of a covariate design."""

    def project(self, values) -> np.ndarray: ...

    def project_basis(self, s) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class CandidateReport:
    index: int
    m: int
    bandwidth_constant: float
    value: float = float("nan")
    fit: Optional[FitResult] = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.fit is not None


@dataclass(frozen=True, eq=False)
class SelectionReport:
    winner: int
    criterion: SelectionCriterion
    candidates: List[CandidateReport] = field(default_factory=list)

    @property
    def best(self) -> CandidateReport:
        return self.candidates[self.winner]


def model_select(
    candidates: Sequence[Tuple[BasisConfig, KnotSet]],
    obs: ObservationSet,
    noise: NoiseSpec,
    criterion: SelectionCriterion = SelectionCriterion.MEAN_KRIG_SE,
    sites=None,
    cfg: Optional[FitConfig] = None,
    projector: Optional[Projector] = None,
) -> SelectionReport:
    """Fit RBK for every candidate basis and pick the best by ``criterion``.

    Ties are broken by fewer knots, then smaller ``b``, then list order.
    With a ``projector`` the fits run on the projected data and basis, and
    ``noise`` must carry unit weights.

    Args:
        candidates: ``(BasisConfig, KnotSet)`` pairs.
        obs: observations; their locations build each S.
        noise: noise template (``sigma2_eps`` and weights).
        criterion: mean kriging SE over ``sites``, or the fitted noise variance
            put on the common n-dimensional scale by ``profiled_sigma2``.
        sites: prediction sites for the SE criterion; defaults to the
            observation locations.
        cfg: RBK optimizer settings.
        projector: optional covariate projection applied before fitting.

    Raises:
        NoModelError: every candidate failed to fit.
    """
    if not candidates:
        raise InvalidArgumentError("model selection needs at least one candidate")
    cfg = cfg or FitConfig(FitMethod.RBK)
    criterion = SelectionCriterion.parse(criterion) if isinstance(criterion, str) else criterion
    site_pts = obs.locations if sites is None else as_points(sites)

    y: Observations = obs
    fit_noise = noise
    if projector is not None:
        if not (np.all(noise.v_delta == 1.0) and np.all(noise.v_eps == 1.0)):
            raise InvalidArgumentError("projected fits need unit noise weights")
        y = projector.project(obs.values)
        fit_noise = NoiseSpec.homoskedastic(y.shape[0], noise.sigma2_delta, noise.sigma2_eps)

    reports: List[CandidateReport] = []
    for index, (config, knots) in enumerate(candidates):
        try:
            s = build_basis(obs.locations, knots, config)
            if projector is not None:
                s = projector.project_basis(s)
            result = fit_rbk(y, s, fit_noise, cfg)
            if criterion is SelectionCriterion.MIN_SIGMA2:
                value = profiled_sigma2(y, s, result.params)
            else:
                a = build_basis(site_pts, knots, config)
                value = float(np.mean(krige_se(a, s, result.params, np.ones(site_pts.shape[0]))))
            reports.append(CandidateReport(index, knots.m, config.bandwidth_constant, value, result))
            logger.info(
                "candidate %d (m=%d, b=%g): %s=%.6g",
                index, knots.m, config.bandwidth_constant, criterion.value, value,
            )
        except KrigeError as exc:
            logger.warning("candidate %d (m=%d, b=%g) failed: %s", index, knots.m, config.bandwidth_constant, exc)
            reports.append(CandidateReport(index, knots.m, config.bandwidth_constant, error=str(exc)))

    fitted = [r for r in reports if r.ok]
    if not fitted:
        raise NoModelError(f"all {len(candidates)} candidates failed to fit")
    best = min(fitted, key=lambda r: (r.value, r.m, r.bandwidth_constant, r.index))
    return SelectionReport(winner=best.index, criterion=criterion, candidates=reports)
