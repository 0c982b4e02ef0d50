"""Shared rank policy for Hankel, estimation and null-space computations.

Every rank decision in the package goes through `rank_tolerance`: singular values
at or below ``sigma_max * max(rows, cols) * RANK_EPS`` count as zero.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

RANK_EPS = 2.0**-45


def singular_values(matrix: np.ndarray) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return np.zeros(0)
    return scipy.linalg.svd(matrix, compute_uv=False)


def rank_tolerance(matrix: np.ndarray, sv: np.ndarray | None = None) -> float:
    matrix = np.atleast_2d(matrix)
    if sv is None:
        sv = singular_values(matrix)
    sigma_max = float(sv[0]) if sv.size else 0.0
    return sigma_max * max(matrix.shape) * RANK_EPS


def numerical_rank(matrix: np.ndarray) -> int:
    sv = singular_values(matrix)
    if sv.size == 0:
        return 0
    return int(np.sum(sv > rank_tolerance(matrix, sv)))


def pinv(matrix: np.ndarray) -> np.ndarray:
    """Moore-Penrose inverse under the shared tolerance."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    return scipy.linalg.pinv(matrix, atol=rank_tolerance(matrix), rtol=0.0)


def null_space(matrix: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the right null space, one column per direction."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    sv = singular_values(matrix)
    if sv.size == 0 or sv[0] == 0.0:
        return np.eye(matrix.shape[1])
    rcond = max(matrix.shape) * RANK_EPS
    return scipy.linalg.null_space(matrix, rcond=rcond)


def row_space_projector(matrix: np.ndarray) -> np.ndarray:
    """``I - M^+ M``: projector onto the null space of ``matrix`` (right action)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    n = matrix.shape[1]
    return np.eye(n) - pinv(matrix) @ matrix


def psd_factor(matrix: np.ndarray) -> np.ndarray:
    """Return F with ``F.T @ F == matrix`` for a symmetric PSD matrix.

    Rows belonging to zero eigenvalues are dropped, so a zero matrix yields an
    empty (0, n) factor.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    sym = 0.5 * (matrix + matrix.T)
    eigval, eigvec = scipy.linalg.eigh(sym)
    scale = max(float(np.max(np.abs(eigval))), 0.0) if eigval.size else 0.0
    keep = eigval > scale * max(sym.shape) * RANK_EPS
    return (eigvec[:, keep] * np.sqrt(eigval[keep])).T


def is_psd(matrix: np.ndarray, tol: float = 1e-10) -> bool:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[0] != matrix.shape[1]:
        return False
    if not np.allclose(matrix, matrix.T, atol=tol, rtol=0.0):
        return False
    eigval = scipy.linalg.eigvalsh(matrix)
    scale = max(1.0, float(np.max(np.abs(eigval)))) if eigval.size else 1.0
    return bool(np.all(eigval >= -tol * scale))
