"""
Spatial Random Effects model.

    y = S eta + delta + eps,   eta ~ N(0, K),   D = sd2 * V_delta + se2 * V_eps

``K`` is either a scaled identity or a full SPD matrix. The concentrated
likelihood works on the m-vector ``y* = Q1'y`` with covariance
``R1 K R1' + D*``, which is what the reduced-basis fit optimizes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import pdist

from .errors import InvalidArgumentError, NotPositiveDefiniteError
from .geometry import KnotSet, Observations, ObservationSet, response
from .linalg import (
    SMWInverse,
    ThinQR,
    apply_qt,
    as_dense,
    chol_logdet,
    chol_solve,
    cholesky,
    reduced_noise_matrix,
    symmetric_eigen,
    thin_qr,
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


def _positive_weights(v, name: str) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    if arr.size == 0 or np.any(~(arr > 0)) or not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} weights must be finite and > 0")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Fine-scale and measurement-error variances with their diagonal weights."""

    sigma2_delta: float
    sigma2_eps: float
    v_delta: np.ndarray
    v_eps: np.ndarray

    def __post_init__(self) -> None:
        if not (self.sigma2_delta >= 0 and math.isfinite(self.sigma2_delta)):
            raise InvalidArgumentError(f"sigma2_delta must be >= 0, got {self.sigma2_delta}")
        if not (self.sigma2_eps >= 0 and math.isfinite(self.sigma2_eps)):
            raise InvalidArgumentError(f"sigma2_eps must be >= 0, got {self.sigma2_eps}")
        v_delta = _positive_weights(self.v_delta, "V_delta")
        v_eps = _positive_weights(self.v_eps, "V_eps")
        if v_delta.shape != v_eps.shape:
            raise InvalidArgumentError("V_delta and V_eps must have the same length")
        object.__setattr__(self, "v_delta", v_delta)
        object.__setattr__(self, "v_eps", v_eps)

    @classmethod
    def homoskedastic(cls, n: int, sigma2_delta: float, sigma2_eps: float = 0.0) -> "NoiseSpec":
        return cls(sigma2_delta, sigma2_eps, np.ones(n), np.ones(n))

    @property
    def n(self) -> int:
        return int(self.v_delta.shape[0])

    def d(self) -> np.ndarray:
        """Diagonal of ``D``."""
        return self.sigma2_delta * self.v_delta + self.sigma2_eps * self.v_eps

    def with_delta(self, sigma2_delta: float) -> "NoiseSpec":
        return NoiseSpec(sigma2_delta, self.sigma2_eps, self.v_delta, self.v_eps)

    def take(self, index) -> "NoiseSpec":
        index = np.asarray(index, dtype=int)
        return NoiseSpec(self.sigma2_delta, self.sigma2_eps, self.v_delta[index], self.v_eps[index])


@dataclass(frozen=True)
class ScaledK:
    """``K = rho_k * I``."""

    rho_k: float

    def __post_init__(self) -> None:
        if not (self.rho_k > 0 and math.isfinite(self.rho_k)):
            raise InvalidArgumentError(f"rho_k must be > 0, got {self.rho_k}")

    def matrix(self, m: int) -> np.ndarray:
        return self.rho_k * np.eye(m)

    def mean_diagonal(self) -> float:
        return self.rho_k


@dataclass(frozen=True, eq=False)
class FullK:
    """Arbitrary symmetric positive definite ``K``."""

    k: np.ndarray

    def __post_init__(self) -> None:
        k = np.array(as_dense(self.k), dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise InvalidArgumentError(f"K must be square, got shape {k.shape}")
        k = 0.5 * (k + k.T)
        if not np.all(np.isfinite(k)) or symmetric_eigen(k)[0][-1] <= 0:
            raise NotPositiveDefiniteError("K must be symmetric positive definite")
        k.setflags(write=False)
        object.__setattr__(self, "k", k)

    def matrix(self, m: int) -> np.ndarray:
        if self.k.shape[0] != m:
            raise InvalidArgumentError(f"K is {self.k.shape[0]}x{self.k.shape[0]}, expected {m}")
        return np.array(self.k)

    def mean_diagonal(self) -> float:
        return float(np.mean(np.diag(self.k)))


KForm = Union[ScaledK, FullK]


@dataclass(frozen=True)
class SREParams:
    kform: KForm
    noise: NoiseSpec


@dataclass(frozen=True, eq=False)
class ReducedData:
    """The data after projection onto the column space of S."""

    y_star: np.ndarray
    qr: ThinQR
    d_star: np.ndarray
    n_original: int

    @property
    def m(self) -> int:
        return int(self.y_star.shape[0])


def _check_dims(obs: ObservationSet, s, noise: Optional[NoiseSpec] = None) -> None:
    if s.shape[0] != obs.n:
        raise InvalidArgumentError(f"basis has {s.shape[0]} rows for {obs.n} observations")
    if noise is not None and noise.n != obs.n:
        raise InvalidArgumentError(f"noise weights have length {noise.n}, expected {obs.n}")


# -------------------------------------------------
# Likelihoods
# -------------------------------------------------
def reduce(obs: ObservationSet, s, noise: NoiseSpec, qr: Optional[ThinQR] = None) -> ReducedData:
    """Concentrate the data onto ``y* = Q1'y`` and ``D* = Q1'DQ1``.

    A precomputed ``qr`` of ``s`` may be passed to skip the factorization.
    """
    _check_dims(obs, s, noise)
    qr = thin_qr(s) if qr is None else qr
    y_star = apply_qt(qr, obs.values)
    d_star = reduced_noise_matrix(qr, noise.d())
    return ReducedData(y_star=y_star, qr=qr, d_star=d_star, n_original=obs.n)


def reduced_loglik(rd: ReducedData, kform: KForm) -> float:
    """Concentrated Gaussian log-likelihood of ``y*``.

    Raises:
        NotPositiveDefiniteError: ``R1 K R1' + D*`` is not SPD.
    """
    r1 = rd.qr.r1
    if isinstance(kform, ScaledK):
        sigma = kform.rho_k * (r1 @ r1.T)
    else:
        sigma = r1 @ kform.matrix(rd.m) @ r1.T
    sigma = sigma + rd.d_star
    factor = cholesky(0.5 * (sigma + sigma.T))
    quad = float(rd.y_star @ chol_solve(factor, rd.y_star))
    return -0.5 * quad - 0.5 * chol_logdet(factor) - 0.5 * rd.m * LOG_2PI


def full_loglik(obs: ObservationSet, s, params: SREParams) -> float:
    """Dense Gaussian log-likelihood of ``y`` under ``S K S' + D``."""
    _check_dims(obs, s, params.noise)
    s_dense = as_dense(s)
    k = params.kform.matrix(s_dense.shape[1])
    sigma = s_dense @ k @ s_dense.T + np.diag(params.noise.d())
    factor = cholesky(0.5 * (sigma + sigma.T))
    y = obs.values
    quad = float(y @ chol_solve(factor, y))
    return -0.5 * quad - 0.5 * chol_logdet(factor) - 0.5 * obs.n * LOG_2PI


def profiled_sigma2(obs: Observations, s, params: SREParams) -> float:
    """Noise variance of ``params`` on the n-dimensional scale of the data.

    Profiles a common factor ``c`` out of ``Sigma = S K S' + D`` and returns
    ``c_hat * |Sigma|^(1/n)`` with ``c_hat = y'Sigma^-1 y / n``. Smaller is
    the same as a larger maximized full likelihood, so bases of different
    sizes fitted to the same ``y`` compare fairly.
    """
    y = response(obs)
    if s.shape[0] != y.shape[0]:
        raise InvalidArgumentError(f"basis has {s.shape[0]} rows for {y.shape[0]} observations")
    n = y.shape[0]
    inverse = SMWInverse.build(params.kform.matrix(s.shape[1]), s, params.noise.d())
    quad = float(y @ inverse.apply(y))
    return quad / n * math.exp(inverse.logdet() / n)


# -------------------------------------------------
# Empirical K
# -------------------------------------------------
def empirical_K(s, sigma_f) -> np.ndarray:
    """K implied by a full covariance ``sigma_f`` of the process at the observations.

    Keeps the m leading eigenpairs ``(P1, L1)`` of ``sigma_f`` and returns
    ``R1^-1 Q1'P1 L1 P1'Q1 R1^-T``.
    """
    sigma_f = as_dense(sigma_f)
    n, m = s.shape
    if sigma_f.shape != (n, n):
        raise InvalidArgumentError(f"sigma_f must be {n}x{n}, got {sigma_f.shape}")
    if n < m:
        raise InvalidArgumentError(f"need n >= m, got n={n}, m={m}")
    if np.max(np.abs(sigma_f - sigma_f.T)) > 1e-10 * max(1.0, float(np.max(np.abs(sigma_f)))):
        raise InvalidArgumentError("sigma_f must be symmetric")

    qr = thin_qr(s)
    values, vectors = symmetric_eigen(sigma_f)
    p1, l1 = vectors[:, :m], values[:m]
    qtp = apply_qt(qr, p1)  # Q1'P1, m x m
    middle = (qtp * l1) @ qtp.T
    left = solve_triangular(qr.r1, middle, lower=False)
    k = solve_triangular(qr.r1, left.T, lower=False).T
    return 0.5 * (k + k.T)


def k_correlation_profile(k, knots: KnotSet) -> List[Tuple[float, float]]:
    """``(distance, correlation)`` for every knot pair ``i < j`` at nonzero distance."""
    k = as_dense(k)
    if k.shape != (knots.m, knots.m):
        raise InvalidArgumentError(f"K must be {knots.m}x{knots.m}, got {k.shape}")
    diag = np.diag(k)
    if np.any(~(diag > 0)):
        raise InvalidArgumentError("K must have a positive diagonal")
    scale = np.sqrt(diag)
    corr = k / np.outer(scale, scale)
    iu, ju = np.triu_indices(knots.m, k=1)
    dist = pdist(knots.coords)  # same i<j order as triu_indices
    values = np.clip(corr[iu, ju], -1.0, 1.0)
    keep = dist > 0
    return [(float(d), float(c)) for d, c in zip(dist[keep], values[keep])]
