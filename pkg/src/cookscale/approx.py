"""First-order approximations to the deletion distance and its moments.

``first_order_cd`` evaluates the sandwich quadratic form

    f' (F - s)^{-1} F (F - s)^{-1} f

from the deleted block's score ``f``, its information contribution ``s``,
and the total information ``F``, all at the full-data estimate: no refit
is involved.  For the linear model with coefficient interest this equals
the exact deletion distance identically.

``expected_cd_trace`` gives the model-expected distance
``tr[(F - s)^{-1} s]`` and ``qf_moments`` the conditional mean and
variance of the linear model distance viewed as a quadratic form in the
error vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import solve_spd, spd_factor, spd_solve
from .data import ClusteredData, CrossSectionData
from .deletion import DeletionGeometry, SubsetIndex
from .exceptions import DimensionMismatch, NotInvertible, ValidationError
from .fitting import LmmWorkspace
from .params import FitResult
from .perturbation import lmm_cluster_grams


@dataclass(frozen=True)
class FirstOrderPieces:
    """Deleted-block score, its information share, and the total information."""

    score: np.ndarray
    hessian: np.ndarray
    total: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.score, dtype=float)
        s = np.asarray(self.hessian, dtype=float)
        F = np.asarray(self.total, dtype=float)
        if f.ndim != 1 or s.shape != (f.size, f.size) or F.shape != s.shape:
            raise DimensionMismatch(
                f"inconsistent piece shapes: {f.shape}, {s.shape}, {F.shape}"
            )


def first_order_cd(pieces: FirstOrderPieces) -> float:
    """Refit-free deletion distance from the three curvature pieces."""
    A = pieces.total - pieces.hessian
    factor = spd_factor(A, NotInvertible, "total minus deleted information")
    v = spd_solve(factor, pieces.score)
    val = float(v @ (pieces.total @ v))
    return max(val, 0.0)


def expected_cd_trace(total_expected: np.ndarray, unit_expected: np.ndarray) -> float:
    """Model-expected deletion distance: tr[(F - s)^{-1} s]."""
    F = np.asarray(total_expected, dtype=float)
    s = np.asarray(unit_expected, dtype=float)
    if F.shape != s.shape or F.ndim != 2:
        raise DimensionMismatch("expected information matrices must share a square shape")
    return float(np.trace(solve_spd(F - s, s, NotInvertible,
                                    "total minus deleted information")))


def qf_moments(geometry: DeletionGeometry) -> tuple[float, float]:
    """Conditional mean and variance of the linear model deletion distance.

    Treating the distance as a quadratic form in the error vector with the
    variance pinned at its reference value: mean is the sum of
    eigval/(1-eigval), variance twice the sum of squares of the same
    ratios.
    """
    lam = geometry.eigvals
    ratio = lam / (1.0 - lam)
    return float(ratio.sum()), float(2.0 * (ratio**2).sum())


def lm_pieces(data: CrossSectionData, fit: FitResult, subset: SubsetIndex,
              y: np.ndarray | None = None) -> FirstOrderPieces:
    """Curvature pieces for the linear model, coefficients as interest.

    With ``y`` given (a synthetic response on the same design), the score
    is evaluated at that response's own profiled coefficients with the
    variance kept from the original fit; this is the one-step-corrected
    score the sampling approximation needs.  Without it, the fit's own
    residuals are used.
    """
    if not isinstance(data, CrossSectionData) or fit.model != "lm":
        raise ValidationError("these pieces require the linear model")
    if subset.kind != "rows":
        raise ValidationError("linear model subsets index rows")
    X = data.X
    sigma2 = fit.theta_hat.sigma2
    if y is None:
        resid = data.y - X @ fit.theta_hat.beta
    else:
        yy = np.asarray(y, dtype=float)
        if yy.shape != data.y.shape:
            raise DimensionMismatch("replacement response has the wrong length")
        beta_tilde, *_ = np.linalg.lstsq(X, yy, rcond=None)
        resid = yy - X @ beta_tilde
    ids = np.asarray(subset.ids, dtype=int)
    Xi = X[ids]
    f = Xi.T @ resid[ids] / sigma2
    s = Xi.T @ Xi / sigma2
    F = X.T @ X / sigma2
    return FirstOrderPieces(score=f, hessian=s, total=F)


def lmm_pieces(data: ClusteredData, fit: FitResult, subset: SubsetIndex,
               y: np.ndarray | None = None,
               workspace: LmmWorkspace | None = None) -> FirstOrderPieces:
    """Curvature pieces for cluster deletion, coefficients as interest.

    The variance components stay at the full-data estimate.  With ``y``
    given, the score is taken at that response's generalized least
    squares coefficients (the one-step correction); without it, at the
    fitted coefficients.
    """
    if not isinstance(data, ClusteredData) or fit.model != "lmm":
        raise ValidationError("these pieces require the random intercept model")
    if subset.kind != "clusters":
        raise ValidationError("clustered subsets index clusters")
    ws = workspace if workspace is not None else LmmWorkspace(data)
    theta = fit.theta_hat
    sb2, sy2 = theta.sigma_b2, theta.sigma_y2
    if y is None:
        beta_tilde = theta.beta
        yy = data.y
    else:
        yy = np.asarray(y, dtype=float)
        if yy.shape != data.y.shape:
            raise DimensionMismatch("replacement response has the wrong length")
        beta_tilde = ws.gls_beta(sb2, sy2, y=yy)
    grams = lmm_cluster_grams(data, fit)
    f = np.zeros(data.p)
    s = np.zeros((data.p, data.p))
    for i in subset.ids:
        Xi = data.cluster_X(i)
        m = int(data.sizes[i])
        r = yy[data.cluster_slice(i)] - Xi @ beta_tilde
        lam1 = sy2 + m * sb2
        f += (Xi.T @ r - (sb2 / lam1) * float(r.sum()) * Xi.sum(axis=0)) / sy2
        s += grams[i]
    F = ws.beta_information(sb2, sy2)
    return FirstOrderPieces(score=f, hessian=s, total=F)
