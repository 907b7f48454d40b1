"""Small statistical utilities shared across the tracking and annotation code."""

from __future__ import annotations

import numpy as np
from scipy.stats import chi2


class DegenerateMatrixError(ValueError):
    """A matrix required to be symmetric positive definite is not."""


#: Relative asymmetry tolerated before a matrix is rejected instead of symmetrized.
SYMMETRY_RTOL = 1e-9


def symmetrize(m: np.ndarray, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Return the symmetric part of ``m``; reject matrices that are
    asymmetric beyond floating-point drift."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DegenerateMatrixError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DegenerateMatrixError("matrix has non-finite entries")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > rtol * scale:
        raise DegenerateMatrixError("matrix asymmetry exceeds tolerance")
    return 0.5 * (m + m.T)


def cholesky_spd(m: np.ndarray) -> np.ndarray:
    """Cholesky factor of an SPD matrix, raising DegenerateMatrixError on failure."""
    try:
        return np.linalg.cholesky(symmetrize(m))
    except np.linalg.LinAlgError as exc:
        raise DegenerateMatrixError("matrix is not positive definite") from exc


def is_spd(m: np.ndarray) -> bool:
    try:
        cholesky_spd(m)
    except DegenerateMatrixError:
        return False
    return True


def mahalanobis_sq(residual: np.ndarray, s: np.ndarray) -> float:
    """Squared Mahalanobis distance r' S^-1 r of a residual under covariance S.

    Raises DegenerateMatrixError if S is not symmetric positive definite.
    """
    r = np.asarray(residual, dtype=float)
    chol = cholesky_spd(s)
    y = np.linalg.solve(chol, r)
    return float(y @ y)


def chi2_quantile(dof: int, p: float) -> float:
    """Quantile of the chi-square distribution with ``dof`` degrees of freedom."""
    if dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    return float(chi2.ppf(p, dof))
