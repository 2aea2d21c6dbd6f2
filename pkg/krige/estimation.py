"""
Parameter estimation for the SRE model.

Three methods share one result type:

* ``rbk``: reduced-basis maximum likelihood. Nelder-Mead on
  ``(log rho_k, log sigma2_delta)`` of the concentrated likelihood of
  ``y* = Q1'y``; K is a scaled identity.
* ``em-full``: the EM updates for an unstructured K, computed with m x m
  algebra through the Woodbury identity.
* ``em-identity``: the same E-step with the M-step restricted to
  ``K = rho_k I``.

The measurement-error variance ``sigma2_eps`` is treated as known and taken
from the noise template.
"""

from __future__ import annotations

import enum
import logging
import math
import time
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import optimize

from .errors import InvalidArgumentError, NotPositiveDefiniteError
from .geometry import Observations, response
from .linalg import (
    SMWInverse,
    ThinQR,
    apply_qt,
    chol_logdet,
    chol_solve,
    cholesky,
    reduced_noise_matrix,
    symmetric_eigen,
    thin_qr,
)
from .sre_model import LOG_2PI, FullK, NoiseSpec, ScaledK, SREParams

logger = logging.getLogger(__name__)

# Variance floors, relative to var(y).
VARIANCE_FLOOR = 1e-8
# Smallest eigenvalue allowed in an EM K-update, relative to tr(K)/m.
EIGEN_FLOOR = 1e-12
ABSOLUTE_FLOOR = 1e-12

RBK_SIMPLEX_STEP = 0.5
RBK_XATOL = 1e-8
RBK_FATOL = 1e-9


class FitMethod(str, enum.Enum):
    RBK = "rbk"
    EM_FULL = "em-full"
    EM_IDENTITY = "em-identity"

    @classmethod
    def parse(cls, value: str) -> "FitMethod":
        try:
            return cls(value.lower().replace("_", "-"))
        except ValueError as exc:
            names = ", ".join(m.value for m in cls)
            raise InvalidArgumentError(f"unknown method {value!r} (expected one of {names})") from exc


@dataclass(frozen=True)
class FitConfig:
    method: FitMethod = FitMethod.RBK
    max_iters: int = 1000
    rel_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise InvalidArgumentError(f"rel_tol must be > 0, got {self.rel_tol}")
        if not isinstance(self.method, FitMethod):
            object.__setattr__(self, "method", FitMethod.parse(str(self.method)))


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted parameters with convergence diagnostics.

    Attributes:
        params: the fitted SRE parameters.
        iterations: optimizer or EM iterations performed.
        converged: whether the stopping rule was met before ``max_iters``.
        loglik_trace: one log-likelihood per iteration (reduced likelihood
            for ``rbk``, full likelihood for the EM methods).
        wall_seconds: wall time of the estimation itself.
        method: the estimation method.
        repairs: number of EM K-updates that needed an eigenvalue floor.
    """

    params: SREParams
    iterations: int
    converged: bool
    loglik_trace: List[float]
    wall_seconds: float
    method: FitMethod
    repairs: int = 0

    @property
    def rho_k(self) -> float:
        """``rho_k`` for scaled fits, the mean diagonal of K otherwise."""
        return self.params.kform.mean_diagonal()

    @property
    def sigma2_delta(self) -> float:
        return self.params.noise.sigma2_delta


def _variance_scale(y: np.ndarray) -> Tuple[float, float]:
    """``var(y)`` and the matching variance floor."""
    var_y = float(np.var(y)) if y.size > 1 else 0.0
    floor = VARIANCE_FLOOR * var_y if var_y > 0 else VARIANCE_FLOOR
    return var_y, floor


def _check_inputs(obs: Observations, s, noise: NoiseSpec) -> None:
    n = response(obs).shape[0]
    if s.shape[0] != n:
        raise InvalidArgumentError(f"basis has {s.shape[0]} rows for {n} observations")
    if noise.n != n:
        raise InvalidArgumentError(f"noise weights have length {noise.n}, expected {n}")


# -------------------------------------------------
# Reduced-basis maximum likelihood
# -------------------------------------------------
def fit_rbk(
    obs: Observations,
    s,
    noise_template: NoiseSpec,
    cfg: Optional[FitConfig] = None,
    qr: Optional[ThinQR] = None,
) -> FitResult:
    """Maximize the concentrated likelihood over ``rho_k`` and ``sigma2_delta``.

    Optimizer non-convergence is reported through ``converged``; points where
    ``R1 K R1' + D*`` is not SPD count as an infinite objective.
    """
    cfg = cfg or FitConfig(FitMethod.RBK)
    _check_inputs(obs, s, noise_template)
    started = time.perf_counter()

    qr = thin_qr(s) if qr is None else qr
    y = response(obs)
    y_star = apply_qt(qr, y)
    m = qr.m
    rr = qr.r1 @ qr.r1.T
    # D* is linear in sigma2_delta
    d_delta = reduced_noise_matrix(qr, noise_template.v_delta)
    d_eps = noise_template.sigma2_eps * reduced_noise_matrix(qr, noise_template.v_eps)

    var_y, floor = _variance_scale(y)
    log_floor = math.log(floor)

    def negloglik(x: np.ndarray) -> float:
        with np.errstate(over="ignore"):
            rho_k, sigma2 = np.exp(np.maximum(x, log_floor))
        sigma = rho_k * rr + sigma2 * d_delta + d_eps
        try:
            factor = cholesky(0.5 * (sigma + sigma.T))
        except NotPositiveDefiniteError:
            return math.inf
        quad = float(y_star @ chol_solve(factor, y_star))
        return 0.5 * quad + 0.5 * chol_logdet(factor) + 0.5 * m * LOG_2PI

    var_star = float(np.var(y_star)) if m > 1 else float(y_star[0] ** 2)
    rho0 = max(var_star / float(np.mean(np.diag(rr))), floor)
    sigma0 = max(0.1 * var_y, floor)
    x0 = np.log([rho0, sigma0])
    simplex = np.vstack([x0, x0 + [RBK_SIMPLEX_STEP, 0.0], x0 + [0.0, RBK_SIMPLEX_STEP]])
    f0 = negloglik(x0)
    if not math.isfinite(f0):
        raise NotPositiveDefiniteError("reduced covariance is not SPD at the initial point")

    trace: List[float] = []

    def record(xk: np.ndarray) -> None:
        trace.append(-negloglik(xk))
        logger.debug("rbk iter %d: loglik=%.10g", len(trace), trace[-1])

    res = optimize.minimize(
        negloglik,
        x0,
        method="Nelder-Mead",
        bounds=[(log_floor, None), (log_floor, None)],
        callback=record,
        options={
            "maxiter": cfg.max_iters,
            "initial_simplex": simplex,
            "xatol": RBK_XATOL,
            "fatol": RBK_FATOL * (1.0 + abs(f0)),
        },
    )

    rho_k, sigma2 = (float(v) for v in np.exp(np.maximum(res.x, log_floor)))
    params = SREParams(ScaledK(rho_k), noise_template.with_delta(sigma2))
    elapsed = time.perf_counter() - started
    logger.info(
        "rbk fit: m=%d rho_k=%.6g sigma2_delta=%.6g iterations=%d converged=%s (%.3fs)",
        m, rho_k, sigma2, len(trace), bool(res.success), elapsed,
    )
    return FitResult(
        params=params,
        iterations=len(trace),
        converged=bool(res.success),
        loglik_trace=trace,
        wall_seconds=elapsed,
        method=FitMethod.RBK,
    )


# -------------------------------------------------
# EM
# -------------------------------------------------
def _smw(k: np.ndarray, s, noise: NoiseSpec, sigma2_delta: float) -> SMWInverse:
    return SMWInverse.build(k, s, noise.with_delta(sigma2_delta).d())


def _loglik(smw: SMWInverse, y: np.ndarray) -> float:
    return -0.5 * float(y @ smw.apply(y)) - 0.5 * smw.logdet() - 0.5 * y.shape[0] * LOG_2PI


def _em_update(
    k: np.ndarray, sigma2_delta: float, smw: SMWInverse, y: np.ndarray, v_delta: np.ndarray
) -> Tuple[np.ndarray, float]:
    """Unrepaired EM update of ``(K, sigma2_delta)`` given ``Sigma^-1``."""
    n = y.shape[0]
    a = smw.apply(y)
    u = k @ smw.st_apply(y)
    k_new = k - k @ smw.st_inverse_s() @ k + np.outer(u, u)
    k_new = 0.5 * (k_new + k_new.T)
    trace_term = float(a @ (v_delta * a)) - float(np.sum(v_delta * smw.diagonal()))
    sigma_new = sigma2_delta + sigma2_delta**2 / n * trace_term
    return k_new, max(sigma_new, ABSOLUTE_FLOOR)


def _repair_pd(k: np.ndarray) -> Tuple[np.ndarray, bool]:
    m = k.shape[0]
    floor = EIGEN_FLOOR * max(float(np.trace(k)) / m, ABSOLUTE_FLOOR)
    values, vectors = symmetric_eigen(k)
    if values[-1] >= floor:
        return k, False
    clipped = np.maximum(values, floor)
    out = (vectors * clipped) @ vectors.T
    return 0.5 * (out + out.T), True


def em_step_full(
    state: Tuple[np.ndarray, float], obs: Observations, s, noise: NoiseSpec
) -> Tuple[np.ndarray, float]:
    """One EM iteration for an unstructured K.

    Every product with ``Sigma^-1`` goes through the Woodbury identity, so no
    n x n matrix is formed. A K-update with an eigenvalue below
    ``1e-12 * tr(K)/m`` is floored there.
    """
    k, sigma2_delta = np.asarray(state[0], dtype=float), float(state[1])
    _check_inputs(obs, s, noise)
    if not sigma2_delta > 0:
        raise InvalidArgumentError(f"sigma2_delta must be > 0, got {sigma2_delta}")
    smw = _smw(k, s, noise, sigma2_delta)
    k_new, sigma_new = _em_update(k, sigma2_delta, smw, response(obs), noise.v_delta)
    k_new, _ = _repair_pd(k_new)
    return k_new, sigma_new


def em_step_identity(
    state: Tuple[float, float], obs: Observations, s, noise: NoiseSpec
) -> Tuple[float, float]:
    """One EM iteration with ``K = rho_k I``: ``rho_k' = tr(K')/m``."""
    rho_k, sigma2_delta = float(state[0]), float(state[1])
    _check_inputs(obs, s, noise)
    if not (rho_k > 0 and sigma2_delta > 0):
        raise InvalidArgumentError("rho_k and sigma2_delta must be > 0")
    m = s.shape[1]
    k = rho_k * np.eye(m)
    smw = _smw(k, s, noise, sigma2_delta)
    k_new, sigma_new = _em_update(k, sigma2_delta, smw, response(obs), noise.v_delta)
    return max(float(np.trace(k_new)) / m, ABSOLUTE_FLOOR), sigma_new


def _relative_change(new: float, old: float) -> float:
    return abs(new - old) / (abs(old) + 1e-12)


def fit_em(
    obs: Observations,
    s,
    noise_template: NoiseSpec,
    cfg: FitConfig,
) -> FitResult:
    """Iterate the EM updates until the largest relative parameter change
    falls below ``cfg.rel_tol`` or ``cfg.max_iters`` is reached.

    For the full method the change of K is measured in Frobenius norm.
    """
    if cfg.method not in (FitMethod.EM_FULL, FitMethod.EM_IDENTITY):
        raise InvalidArgumentError(f"fit_em cannot run method {cfg.method.value}")
    _check_inputs(obs, s, noise_template)
    started = time.perf_counter()

    y = response(obs)
    m = s.shape[1]
    var_y, floor = _variance_scale(y)
    full = cfg.method is FitMethod.EM_FULL
    k = 0.9 * max(var_y, floor) * np.eye(m)
    rho_k = 0.9 * max(var_y, floor)
    sigma2 = max(0.1 * var_y, floor)

    smw = _smw(k, s, noise_template, sigma2)
    trace: List[float] = []
    repairs = 0
    converged = False
    for iteration in range(1, cfg.max_iters + 1):
        k_new, sigma_new = _em_update(k, sigma2, smw, y, noise_template.v_delta)
        sigma_new = max(sigma_new, floor)
        if full:
            k_new, repaired = _repair_pd(k_new)
            repairs += int(repaired)
            change = np.linalg.norm(k_new - k) / (np.linalg.norm(k) + 1e-12)
        else:
            rho_new = max(float(np.trace(k_new)) / m, ABSOLUTE_FLOOR)
            change = _relative_change(rho_new, rho_k)
            rho_k = rho_new
            k_new = rho_new * np.eye(m)
        change = max(float(change), _relative_change(sigma_new, sigma2))
        k, sigma2 = k_new, sigma_new

        smw = _smw(k, s, noise_template, sigma2)
        trace.append(_loglik(smw, y))
        logger.debug(
            "%s iter %d: loglik=%.10g change=%.3g", cfg.method.value, iteration, trace[-1], change
        )
        if change < cfg.rel_tol:
            converged = True
            break

    if repairs:
        warnings.warn(f"{repairs} EM K-updates needed an eigenvalue floor", RuntimeWarning)
        logger.warning("em-full: %d K-updates repaired to positive definite", repairs)

    kform = FullK(k) if full else ScaledK(rho_k)
    params = SREParams(kform, noise_template.with_delta(sigma2))
    elapsed = time.perf_counter() - started
    logger.info(
        "%s fit: m=%d mean diag K=%.6g sigma2_delta=%.6g iterations=%d converged=%s (%.3fs)",
        cfg.method.value, m, kform.mean_diagonal(), sigma2, len(trace), converged, elapsed,
    )
    return FitResult(
        params=params,
        iterations=len(trace),
        converged=converged,
        loglik_trace=trace,
        wall_seconds=elapsed,
        method=cfg.method,
        repairs=repairs,
    )


def fit(obs: Observations, s, noise_template: NoiseSpec, cfg: FitConfig) -> FitResult:
    """Dispatch to the estimator named by ``cfg.method``."""
    if cfg.method is FitMethod.RBK:
        return fit_rbk(obs, s, noise_template, cfg)
    return fit_em(obs, s, noise_template, cfg)
