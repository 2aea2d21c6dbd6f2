"""
Matérn covariance and the smoothness/range calibration of the simulations.

The covariance between two sites at distance ``d`` is

    rho / (2^(nu-1) Gamma(nu)) * (d/theta)^nu * K_nu(d/theta)

with ``K_nu`` the modified Bessel function of the second kind. The value at
``d = 0`` is the limit ``rho``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special
from scipy.spatial.distance import cdist

from .errors import InvalidArgumentError, NoSolutionError
from .geometry import as_points

logger = logging.getLogger(__name__)

THETA_BRACKET = (1e-6, 1e3)


@dataclass(frozen=True)
class MaternParams:
    """Smoothness ``nu``, sill ``rho`` and range ``theta``."""

    nu: float
    rho: float = 1.0
    theta: float = 0.137

    def __post_init__(self) -> None:
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise InvalidArgumentError(f"nu must be in (0, inf), got {self.nu}")
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise InvalidArgumentError(f"theta must be in (0, inf), got {self.theta}")
        if not (self.rho >= 0 and math.isfinite(self.rho)):
            raise InvalidArgumentError(f"rho must be in [0, inf), got {self.rho}")


def bessel_k(order: float, x):
    """Modified Bessel function of the second kind ``K_order(x)`` for ``x > 0``."""
    if not order > 0:
        raise InvalidArgumentError(f"Bessel order must be > 0, got {order}")
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise InvalidArgumentError("K_nu(x) is only defined here for x > 0")
    out = special.kv(order, arr)
    if out.ndim == 0:
        return float(out)
    return out


def matern_cov(params: MaternParams, d):
    """Matérn covariance at distance(s) ``d``; scalar in, scalar out."""
    dist = np.asarray(d, dtype=float)
    if np.any(dist < 0):
        raise InvalidArgumentError("distances must be >= 0")

    out = np.full(dist.shape, params.rho, dtype=float)
    positive = dist > 0
    if np.any(positive):
        scaled = dist[positive] / params.theta
        coef = params.rho / (2.0 ** (params.nu - 1.0) * special.gamma(params.nu))
        with np.errstate(over="ignore", invalid="ignore"):
            values = coef * scaled**params.nu * special.kv(params.nu, scaled)
        # 0 * inf at vanishing lags; the limit there is rho
        values = np.where(np.isfinite(values), values, params.rho)
        out[positive] = np.minimum(values, params.rho)
    if out.ndim == 0:
        return float(out)
    return out


def cov_matrix(params: MaternParams, pts_a, pts_b=None) -> np.ndarray:
    """Dense cross-covariance between two location sets.

    With ``pts_b`` omitted the result is the symmetric covariance of ``pts_a``
    with ``rho`` on the diagonal.
    """
    a = as_points(pts_a)
    b = a if pts_b is None else as_points(pts_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    cov = matern_cov(params, cdist(a, b))
    if pts_b is None:
        cov = 0.5 * (cov + cov.T)
    return cov


def calibrate_theta(nu: float, target_corr: float = 0.2, target_dist: float = 1.0 / 3.0) -> float:
    """Range ``theta`` giving correlation ``target_corr`` at ``target_dist``.

    The correlation is increasing in ``theta`` at a fixed lag, so bisection on
    ``log theta`` over ``[1e-6, 1e3]`` is safe.

    Raises:
        NoSolutionError: the target is not bracketed on that interval.
    """
    if not 0 < target_corr < 1:
        raise InvalidArgumentError(f"target correlation must be in (0, 1), got {target_corr}")
    if not target_dist > 0:
        raise InvalidArgumentError(f"target distance must be > 0, got {target_dist}")

    def gap(log_theta: float) -> float:
        params = MaternParams(nu=nu, rho=1.0, theta=math.exp(log_theta))
        return matern_cov(params, target_dist) - target_corr

    lo, hi = (math.log(t) for t in THETA_BRACKET)
    if gap(lo) * gap(hi) > 0:
        raise NoSolutionError(
            f"no theta in {THETA_BRACKET} gives correlation {target_corr} at {target_dist}"
        )
    log_theta = optimize.bisect(gap, lo, hi, xtol=1e-14, maxiter=200)
    theta = math.exp(log_theta)
    logger.debug("calibrated theta=%.6g for nu=%g", theta, nu)
    return theta
