"""
Sparse and dense matrix kernels.

Basis matrices are ``scipy.sparse`` CSC matrices; everything of size m x m
(K, R1, D*, the Woodbury precision) is a dense ``numpy`` array. The thin QR
of S is taken through the Cholesky factor of the Gram matrix S'S, so Q1 is
never materialized and Q1'v is applied as R1^-T (S'v).

Two forms of the Sherman-Morrison-Woodbury identity are provided:

* ``woodbury_gain`` / ``WoodburyPrecision`` use
  (K^-1 + S'D^-1 S)^-1 S'D^-1 and need K positive definite;
* ``SMWInverse`` uses a square root K = LL' and stays valid for singular K,
  which the EM iterations can approach.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np
from scipy import linalg as sla
from scipy import sparse

from .errors import (
    InvalidArgumentError,
    NotPositiveDefiniteError,
    RankDeficientBasisError,
)

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
PIVOT_TOL = 1e-14

SparseMatrix = sparse.csc_matrix


def as_sparse(matrix) -> sparse.csc_matrix:
    """Return ``matrix`` as sorted CSC without explicit zeros."""
    out = sparse.csc_matrix(matrix, dtype=float)
    out.sort_indices()
    out.eliminate_zeros()
    return out


def as_dense(matrix) -> np.ndarray:
    if sparse.issparse(matrix):
        return matrix.toarray()
    return np.asarray(matrix, dtype=float)


def _diag_vector(d, n: int) -> np.ndarray:
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.shape[0] != n:
        raise InvalidArgumentError(f"diagonal has length {d.shape[0]}, expected {n}")
    return d


# -------------------------------------------------
# Products
# -------------------------------------------------
def spmv(a, v) -> np.ndarray:
    """``A v``."""
    v = np.asarray(v, dtype=float)
    if a.shape[1] != v.shape[0]:
        raise InvalidArgumentError(f"cannot multiply {a.shape} by vector of length {v.shape[0]}")
    return np.asarray(a @ v)


def spmv_t(a, v) -> np.ndarray:
    """``A' v``."""
    v = np.asarray(v, dtype=float)
    if a.shape[0] != v.shape[0]:
        raise InvalidArgumentError(f"cannot multiply {a.shape}' by vector of length {v.shape[0]}")
    return np.asarray(a.T @ v)


def gram(s) -> np.ndarray:
    """Dense symmetric ``S'S``."""
    g = as_dense(s.T @ s)
    return 0.5 * (g + g.T)


def weighted_gram(s, w) -> np.ndarray:
    """Dense symmetric ``S' diag(w) S``."""
    w = _diag_vector(w, s.shape[0])
    if sparse.issparse(s):
        g = as_dense(s.T @ sparse.diags(w) @ s)
    else:
        s = np.asarray(s, dtype=float)
        g = s.T @ (w[:, None] * s)
    return 0.5 * (g + g.T)


# -------------------------------------------------
# Cholesky
# -------------------------------------------------
@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular ``L`` with ``M = L L'``."""

    lower: np.ndarray

    @property
    def size(self) -> int:
        return int(self.lower.shape[0])


def cholesky(m) -> CholeskyFactor:
    """Cholesky factor of a symmetric positive definite matrix.

    Raises:
        InvalidArgumentError: ``m`` is not symmetric within 1e-10.
        NotPositiveDefiniteError: a pivot is not above 1e-14 times the
            largest diagonal entry.
    """
    m = as_dense(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    scale = max(float(np.max(np.abs(m))), 1.0)
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
        raise InvalidArgumentError("matrix is not symmetric")
    try:
        lower = sla.cholesky(0.5 * (m + m.T), lower=True, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(f"Cholesky failed: {exc}") from exc
    max_diag = float(np.max(np.diag(m)))
    if np.min(np.diag(lower)) ** 2 <= PIVOT_TOL * max_diag:
        raise NotPositiveDefiniteError("Cholesky pivot below tolerance")
    return CholeskyFactor(lower)


def chol_logdet(factor: CholeskyFactor) -> float:
    """``log |M| = 2 * sum(log L_ii)``."""
    return float(2.0 * np.sum(np.log(np.diag(factor.lower))))


def chol_solve(factor: CholeskyFactor, b) -> np.ndarray:
    """``M^-1 b`` by forward and back substitution; ``b`` may be a matrix."""
    return sla.cho_solve((factor.lower, True), np.asarray(b, dtype=float))


def chol_inverse(factor: CholeskyFactor) -> np.ndarray:
    inv = chol_solve(factor, np.eye(factor.size))
    return 0.5 * (inv + inv.T)


# -------------------------------------------------
# Thin QR of the basis
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class ThinQR:
    """``S = Q1 R1`` with only ``R1`` and ``S`` kept."""

    r1: np.ndarray
    s: sparse.csc_matrix

    @property
    def m(self) -> int:
        return int(self.r1.shape[0])

    @property
    def n(self) -> int:
        return int(self.s.shape[0])


def thin_qr(s) -> ThinQR:
    """Thin QR of S through the Cholesky factor of ``S'S``.

    Raises:
        RankDeficientBasisError: ``S'S`` is not positive definite, e.g. an
            empty column or coincident knots.
    """
    s = as_sparse(s)
    empty = np.flatnonzero(np.diff(s.indptr) == 0)
    if empty.size:
        raise RankDeficientBasisError(
            f"basis columns {empty.tolist()[:10]} have no support among the observations"
        )
    try:
        factor = cholesky(gram(s))
    except NotPositiveDefiniteError as exc:
        raise RankDeficientBasisError(f"S'S is singular: {exc}") from exc
    return ThinQR(r1=factor.lower.T.copy(), s=s)


def apply_qt(qr: ThinQR, v) -> np.ndarray:
    """``Q1' v = R1^-T (S' v)``; ``v`` may have several columns."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != qr.n:
        raise InvalidArgumentError(f"expected {qr.n} rows, got {v.shape[0]}")
    stv = as_dense(qr.s.T @ v)
    return sla.solve_triangular(qr.r1, stv, trans="T", lower=False)


def _sandwich_inverse(r1: np.ndarray, middle: np.ndarray) -> np.ndarray:
    """``R1^-T middle R1^-1``, symmetrized."""
    left = sla.solve_triangular(r1, middle, trans="T", lower=False)
    out = sla.solve_triangular(r1, left.T, trans="T", lower=False).T
    return 0.5 * (out + out.T)


def reduced_noise_matrix(qr: ThinQR, d) -> np.ndarray:
    """``D* = Q1' diag(d) Q1``.

    Equal weights give ``d[0] * I`` exactly, since ``Q1'Q1 = I``.
    """
    d = _diag_vector(d, qr.n)
    if np.any(d < 0):
        raise InvalidArgumentError("noise variances must be >= 0")
    if d.size and np.all(d == d[0]):
        return d[0] * np.eye(qr.m)
    return _sandwich_inverse(qr.r1, weighted_gram(qr.s, d))


# -------------------------------------------------
# Eigen decomposition
# -------------------------------------------------
def symmetric_eigen(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and matching orthonormal eigenvectors."""
    m = as_dense(m)
    values, vectors = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(values, kind="stable")[::-1]
    return values[order], vectors[:, order]


def psd_root(k) -> np.ndarray:
    """A factor ``L`` with ``L L' = K`` for a positive semidefinite ``K``.

    Uses Cholesky when ``K`` is positive definite and an eigenvalue square
    root otherwise; eigenvalues below ``-1e-10 * max|eig|`` are rejected.
    """
    k = as_dense(k)
    if not np.any(k):
        return np.zeros_like(k)
    try:
        return cholesky(k).lower
    except NotPositiveDefiniteError:
        pass
    values, vectors = symmetric_eigen(k)
    if values[-1] < -1e-10 * max(abs(values[0]), 1e-300):
        raise NotPositiveDefiniteError(f"K has a negative eigenvalue {values[-1]:.3g}")
    return vectors * np.sqrt(np.clip(values, 0.0, None))


# -------------------------------------------------
# Woodbury identities
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class WoodburyPrecision:
    """Factorization of ``P = K^-1 + S'D^-1 S`` for a positive definite ``K``."""

    s: sparse.csc_matrix
    d: np.ndarray
    k: np.ndarray
    precision: CholeskyFactor

    @classmethod
    def build(cls, k, s, d) -> "WoodburyPrecision":
        s = as_sparse(s)
        d = _diag_vector(d, s.shape[0])
        if np.any(d <= 0):
            raise InvalidArgumentError("noise diagonal D must be strictly positive")
        k = as_dense(k)
        k_inv = chol_inverse(cholesky(k))
        precision = cholesky(k_inv + weighted_gram(s, 1.0 / d))
        return cls(s=s, d=d, k=k, precision=precision)

    def gain(self, v) -> np.ndarray:
        """``(K^-1 + S'D^-1 S)^-1 S'D^-1 v``, equal to ``K S'(S K S' + D)^-1 v``."""
        v = np.asarray(v, dtype=float)
        scaled = v / self.d if v.ndim == 1 else v / self.d[:, None]
        return chol_solve(self.precision, as_dense(self.s.T @ scaled))


def woodbury_gain(k, s, d) -> Callable[[np.ndarray], np.ndarray]:
    """Operator ``v -> (K^-1 + S'D^-1 S)^-1 S'D^-1 v`` built from m x m factors."""
    return WoodburyPrecision.build(k, s, d).gain


@dataclass(frozen=True, eq=False)
class SMWInverse:
    """``(S K S' + D)^-1`` through a square root ``K = L L'``.

    With ``W = S L`` and ``M = I + W'D^-1 W`` the identity reads
    ``Sigma^-1 = D^-1 - D^-1 W M^-1 W' D^-1`` and
    ``log|Sigma| = log|D| + log|M|``.
    """

    s: sparse.csc_matrix
    d: np.ndarray
    root: np.ndarray
    inner: CholeskyFactor
    g: np.ndarray

    @classmethod
    def build(cls, k, s, d) -> "SMWInverse":
        s = as_sparse(s)
        d = _diag_vector(d, s.shape[0])
        if np.any(d <= 0):
            raise InvalidArgumentError("noise diagonal D must be strictly positive")
        root = psd_root(k)
        g = weighted_gram(s, 1.0 / d)
        inner = cholesky(np.eye(root.shape[1]) + root.T @ g @ root)
        return cls(s=s, d=d, root=root, inner=inner, g=g)

    def _dinv(self, v: np.ndarray) -> np.ndarray:
        return v / self.d if v.ndim == 1 else v / self.d[:, None]

    def apply(self, v) -> np.ndarray:
        """``Sigma^-1 v`` for a vector or an n x k block."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.d.shape[0]:
            raise InvalidArgumentError(f"expected {self.d.shape[0]} rows, got {v.shape[0]}")
        dv = self._dinv(v)
        correction = self.root @ chol_solve(self.inner, self.root.T @ as_dense(self.s.T @ dv))
        return dv - self._dinv(as_dense(self.s @ correction))

    def st_apply(self, v) -> np.ndarray:
        """``S' Sigma^-1 v`` without leaving m dimensions after ``S'D^-1 v``."""
        u = as_dense(self.s.T @ self._dinv(np.asarray(v, dtype=float)))
        return u - self.g @ (self.root @ chol_solve(self.inner, self.root.T @ u))

    def st_inverse_s(self) -> np.ndarray:
        """``S' Sigma^-1 S = G - G L M^-1 L' G`` with ``G = S'D^-1 S``."""
        gl = self.g @ self.root
        out = self.g - gl @ chol_solve(self.inner, gl.T)
        return 0.5 * (out + out.T)

    def diagonal(self) -> np.ndarray:
        """Diagonal of ``Sigma^-1``, one m-dimensional solve per row block."""
        w = as_dense(self.s @ self.root)
        z = sla.solve_triangular(self.inner.lower, w.T, lower=True)
        return 1.0 / self.d - np.sum(z * z, axis=0) / self.d**2

    def logdet(self) -> float:
        return float(np.sum(np.log(self.d)) + chol_logdet(self.inner))


def smw_inverse_apply(k, s, d, v) -> np.ndarray:
    """``(S K S' + D)^-1 v`` via the Sherman-Morrison-Woodbury identity."""
    return SMWInverse.build(k, s, d).apply(v)


# -------------------------------------------------
# Debug serialization
# -------------------------------------------------
def write_triplets(matrix, handle: TextIO) -> None:
    """Write ``nrows ncols nnz`` then one ``row,col,value`` line per entry."""
    coo = as_sparse(matrix).tocoo()
    order = np.lexsort((coo.row, coo.col))
    handle.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
    for i in order:
        handle.write(f"{coo.row[i]},{coo.col[i]},{coo.data[i]:.17g}\n")


def read_triplets(handle: TextIO) -> sparse.csc_matrix:
    header = handle.readline().split()
    if len(header) != 3:
        raise InvalidArgumentError("triplet header must be 'nrows ncols nnz'")
    nrows, ncols, nnz = (int(x) for x in header)
    rows, cols, vals = [], [], []
    for line in handle:
        if not line.strip():
            continue
        r, c, v = line.split(",")
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))
    if len(vals) != nnz:
        raise InvalidArgumentError(f"expected {nnz} entries, found {len(vals)}")
    return as_sparse(sparse.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)))
