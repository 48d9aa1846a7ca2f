"""Dense SPD linear algebra: regularized covariance, ridge regression, elliptical norms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, SingularMatrixError, ValidationError

EIG_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class CovarianceState:
    """``matrix = sum_i phi_i phi_i^T + lam * I`` over ``count`` accumulated vectors."""

    matrix: np.ndarray
    lam: float
    count: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def empty(cls, dim: int, lam: float) -> "CovarianceState":
        if lam < 0:
            raise ValidationError("lambda must be non-negative")
        return cls(lam * np.eye(dim), float(lam), 0)

    @classmethod
    def from_rows(cls, rows: np.ndarray, lam: float) -> "CovarianceState":
        rows = np.asarray(rows, dtype=np.float64)
        m = rows.T @ rows + lam * np.eye(rows.shape[1])
        return cls(0.5 * (m + m.T), float(lam), rows.shape[0])

    def to_dict(self) -> dict:
        return {"lam": self.lam, "count": self.count, "matrix": self.matrix.tolist()}


def cov_accumulate(cov: CovarianceState, phi) -> CovarianceState:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (cov.dim,):
        raise ValidationError(f"vector of shape {phi.shape} added to {cov.dim}-dim covariance")
    return CovarianceState(cov.matrix + np.outer(phi, phi), cov.lam, cov.count + 1)


class _SPDSolver:
    """Solves ``M x = b`` by Cholesky, falling back to a clamped eigendecomposition."""

    def __init__(self, M: np.ndarray, *, allow_clamp: bool = True):
        M = np.asarray(M, dtype=np.float64)
        self.chol = None
        try:
            self.chol = scipy.linalg.cho_factor(M, lower=True, check_finite=True)
            return
        except scipy.linalg.LinAlgError:
            pass
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        scale = max(1.0, float(np.abs(w).max()))
        cond = float(w.max() / w.min()) if w.min() > 0 else float("inf")
        report = f"eigenvalues in [{w.min():.3e}, {w.max():.3e}], condition {cond:.3e}"
        if w.min() < -1e-8 * scale:
            raise NumericalError(f"matrix is not positive semi-definite: {report}")
        if not allow_clamp:
            raise SingularMatrixError(f"matrix is singular: {report}")
        self.w = np.maximum(w, EIG_FLOOR)
        self.V = V

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.chol is not None:
            return scipy.linalg.cho_solve(self.chol, b)
        return self.V @ ((self.V.T @ b) / (self.w if b.ndim == 1 else self.w[:, None]))


def ridge_fit(design_rows, targets, lam: float) -> np.ndarray:
    """``argmin_theta sum_i (phi_i^T theta - y_i)^2 + lam ||theta||^2``."""
    X = np.asarray(design_rows, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValidationError(f"design {X.shape} and targets {y.shape} do not agree")
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    d = X.shape[1]
    M = X.T @ X + lam * np.eye(d)
    if lam == 0 and np.linalg.matrix_rank(X) < d:
        raise SingularMatrixError(f"rank-deficient design ({np.linalg.matrix_rank(X)} < {d}) with lambda = 0")
    return _SPDSolver(M, allow_clamp=lam > 0).solve(X.T @ y)


def quad_norms(phis, cov: CovarianceState) -> np.ndarray:
    """Row-wise ``sqrt(phi^T M^{-1} phi)`` with one factorization of ``M``."""
    phis = np.asarray(phis, dtype=np.float64)
    flat = phis.reshape(-1, cov.dim)
    solved = _SPDSolver(cov.matrix).solve(flat.T)
    q = np.einsum("nd,dn->n", flat, solved)
    return np.sqrt(np.maximum(q, 0.0)).reshape(phis.shape[:-1])


def quad_norm(phi, cov: CovarianceState) -> float:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (cov.dim,):
        raise ValidationError(f"vector of shape {phi.shape} for {cov.dim}-dim covariance")
    return float(quad_norms(phi[None, :], cov)[0])
