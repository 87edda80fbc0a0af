"""Small dense linear algebra helpers.

All symmetric positive definite solves go through Cholesky factorizations;
no routine here forms an explicit inverse to solve a system.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from .exceptions import NotInvertible, RankDeficientDesign

# Singular values below RANK_RTOL * s_max count as zero in rank checks.
RANK_RTOL = 1e-10


def numerical_rank(X: np.ndarray) -> int:
    """Numerical rank of a matrix, via its singular values."""
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def require_full_column_rank(X: np.ndarray, what: str = "design matrix") -> None:
    if numerical_rank(X) < X.shape[1]:
        raise RankDeficientDesign(
            f"{what} has numerical rank {numerical_rank(X)} < {X.shape[1]} columns"
        )


def spd_factor(A: np.ndarray, exc: type = NotInvertible, what: str = "matrix"):
    """Cholesky factor of a symmetric positive definite matrix."""
    try:
        return sla.cho_factor(np.asarray(A, dtype=float), lower=True)
    except (sla.LinAlgError, ValueError) as err:
        raise exc(f"{what} is not positive definite: {err}") from err


def spd_solve(factor, b: np.ndarray) -> np.ndarray:
    return sla.cho_solve(factor, np.asarray(b, dtype=float))


def solve_spd(A: np.ndarray, b: np.ndarray, exc: type = NotInvertible,
              what: str = "matrix") -> np.ndarray:
    return spd_solve(spd_factor(A, exc, what), b)


def inv_spd(A: np.ndarray, exc: type = NotInvertible, what: str = "matrix") -> np.ndarray:
    """Inverse of an SPD matrix, for use as a result (never to solve)."""
    A = np.asarray(A, dtype=float)
    out = spd_solve(spd_factor(A, exc, what), np.eye(A.shape[0]))
    return 0.5 * (out + out.T)


def quad_form_spd_inv(A: np.ndarray, v: np.ndarray, exc: type = NotInvertible,
                      what: str = "matrix") -> float:
    """v' A^{-1} v for SPD A."""
    return float(np.asarray(v, dtype=float) @ solve_spd(A, v, exc, what))
