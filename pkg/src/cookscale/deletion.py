"""Case deletion: subsets, refits, and Cook's distance in three forms.

The distance for a deleted subset I is the quadratic form

    (theta_del - theta_hat)' W (theta_del - theta_hat)

where W comes from the full-data fit's information matrix (restricted to
the interest block when a selector is set) and is never re-estimated
after the deletion.  For the linear model with coefficient interest the
same number has a closed form in the subset's residuals and leverage
submatrix, and a spectral form in that submatrix's eigenvalues; all three
agree to solver precision and the test-suite holds them to it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg as sla

from ._linalg import numerical_rank, solve_spd, spd_factor, spd_solve
from .data import ClusteredData, CrossSectionData
from .exceptions import (
    DimensionMismatch,
    LeverageOne,
    RankDeficientDesign,
    SubsetTooLarge,
    ValidationError,
)
from .fitting import LmmWorkspace, fit_lmm_em, fit_ols
from .params import FitResult, Theta, ThetaLM, ThetaLMM

# A leverage eigenvalue this close to one means the subset carries a
# design direction entirely and the deletion is not invertible.
LEVERAGE_TOL = 1e-10


@dataclass(frozen=True)
class SubsetIndex:
    """A validated deletion target: row indices or cluster indices.

    ``ids`` are always positional.  ``names`` carries the user-facing
    cluster labels when they differ from the positions.
    """

    kind: str
    ids: tuple[int, ...]
    n_obs: int
    names: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("rows", "clusters"):
            raise ValidationError(f"unknown subset kind {self.kind!r}")
        if len(self.ids) == 0:
            raise ValidationError("subset must be nonempty")
        if self.names is not None and len(self.names) != len(self.ids):
            raise ValidationError("subset names and ids differ in length")

    @property
    def label(self) -> str:
        shown = self.names if self.names is not None else self.ids
        return ",".join(str(i) for i in shown)


def make_subset(data, ids: Sequence[int]) -> SubsetIndex:
    """Validate and normalize a deletion subset for the given dataset.

    Row subsets must leave a full-rank design; cluster subsets must leave
    at least two clusters.  Indices are sorted and deduplicated.
    """
    idx = sorted(set(int(i) for i in ids))
    if not idx:
        raise ValidationError("subset must be nonempty")
    if isinstance(data, CrossSectionData):
        if idx[0] < 0 or idx[-1] >= data.n:
            raise ValidationError(f"row index out of range: {idx}")
        keep = np.setdiff1d(np.arange(data.n), idx)
        if keep.size == 0 or numerical_rank(data.X[keep]) < data.p:
            raise SubsetTooLarge(
                f"deleting rows {idx} leaves a rank-deficient design"
            )
        return SubsetIndex("rows", tuple(idx), len(idx))
    if isinstance(data, ClusteredData):
        if idx[0] < 0 or idx[-1] >= data.n_clusters:
            raise ValidationError(f"cluster index out of range: {idx}")
        if data.n_clusters - len(idx) < 2:
            raise SubsetTooLarge(
                f"deleting {len(idx)} of {data.n_clusters} clusters leaves fewer than 2"
            )
        n_obs = int(data.sizes[idx].sum())
        names = tuple(data.cluster_ids[i] for i in idx)
        return SubsetIndex("clusters", tuple(idx), n_obs, names=names)
    raise ValidationError(f"unsupported data type {type(data).__name__}")


def enumerate_subsets(data) -> list[SubsetIndex]:
    """Default deletion targets: every row (LM) or every cluster (LMM)."""
    if isinstance(data, CrossSectionData):
        return [make_subset(data, [i]) for i in range(data.n)]
    return [make_subset(data, [i]) for i in range(data.n_clusters)]


@dataclass(frozen=True)
class DeletionGeometry:
    """Leverage geometry of one deleted subset of the linear model.

    ``h_matrix`` is the subset block of the hat matrix, ``eigvals`` its
    spectrum, ``e_hat`` the subset residuals, and ``h_vec`` the rotated,
    (1 - eigval)^(-1/2)-scaled residual coordinates.
    """

    h_matrix: np.ndarray
    eigvals: np.ndarray
    e_hat: np.ndarray
    h_vec: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigvals, dtype=float)
        if lam.size and (lam.min() < -1e-8 or lam.max() > 1.0 + 1e-8):
            raise ValidationError(f"leverage eigenvalues outside [0, 1]: {lam}")


def _lm_context(data, fit):
    if not isinstance(data, CrossSectionData) or fit.model != "lm":
        raise ValidationError("this operation requires the linear model")
    if fit.p != data.p:
        raise DimensionMismatch("fit and data disagree on the number of columns")


def _require_beta_interest(fit: FitResult):
    L = fit.interest_selector
    if L is None or L.shape[1] != fit.p or not np.array_equal(
        L, np.vstack([np.eye(fit.p), np.zeros((fit.q - fit.p, fit.p))])
    ):
        raise ValidationError(
            "closed forms require the coefficient block as the interest"
        )


def deletion_geometry(data: CrossSectionData, fit: FitResult,
                      subset: SubsetIndex) -> DeletionGeometry:
    """Subset leverage block, spectrum, residuals, and rotated residuals."""
    _lm_context(data, fit)
    if subset.kind != "rows":
        raise ValidationError("linear model subsets index rows")
    ids = np.asarray(subset.ids, dtype=int)
    X = data.X
    R = np.linalg.qr(X, mode="r")
    if np.abs(np.diag(R)).min() <= 1e-12 * np.abs(np.diag(R)).max():
        raise RankDeficientDesign("design matrix is numerically rank deficient")
    W = sla.solve_triangular(R.T, X[ids].T, lower=True)
    H = W.T @ W
    H = 0.5 * (H + H.T)
    lam, gamma = np.linalg.eigh(H)
    lam = np.clip(lam, 0.0, None)
    if lam.size and lam.max() >= 1.0 - LEVERAGE_TOL:
        raise LeverageOne(
            f"deletion leverage eigenvalue {lam.max():.12f} reaches one for rows {subset.ids}"
        )
    e_hat = data.y[ids] - X[ids] @ fit.theta_hat.beta
    h_vec = (gamma.T @ e_hat) / np.sqrt(1.0 - lam)
    return DeletionGeometry(h_matrix=H, eigvals=lam, e_hat=e_hat, h_vec=h_vec)


def lm_beta_downdate(data: CrossSectionData, fit: FitResult,
                     ids: Sequence[int]) -> np.ndarray:
    """Deleted-data coefficients via rank-k downdate of the full-data fit.

    An empty id list is the identity.  Equals the coefficients from
    refitting without those rows, to solver precision.
    """
    _lm_context(data, fit)
    ids = np.asarray(sorted(set(int(i) for i in ids)), dtype=int)
    beta = fit.theta_hat.beta
    if ids.size == 0:
        return beta.copy()
    subset = make_subset(data, ids)
    geo = deletion_geometry(data, fit, subset)
    X = data.X
    core = np.eye(ids.size) - geo.h_matrix
    adj = solve_spd(core, geo.e_hat, LeverageOne, "I - H_I")
    XtX = X.T @ X
    return beta - solve_spd(XtX, X[ids].T @ adj, RankDeficientDesign, "X'X")


def refit_without(data, subset: SubsetIndex, fit: FitResult | None = None,
                  **fit_kwargs) -> Theta:
    """Maximize the deleted-data likelihood with the same fitter.

    For the linear model this equals the closed-form downdate of the
    coefficients; for the random intercept model the EM restarts from the
    full-data estimate unless overridden.
    """
    if isinstance(data, CrossSectionData):
        if subset.kind != "rows":
            raise ValidationError("linear model subsets index rows")
        keep = np.setdiff1d(np.arange(data.n), np.asarray(subset.ids, dtype=int))
        Xr, yr = data.X[keep], data.y[keep]
        if keep.size == 0 or numerical_rank(Xr) < data.p:
            raise SubsetTooLarge(
                f"deleting rows {subset.ids} leaves a rank-deficient design"
            )
        # Point estimate only: a deleted fit may legitimately have zero
        # residual variance, which the full-fit constructor must reject
        # but the distance (coefficient interest) never touches.
        beta, *_ = np.linalg.lstsq(Xr, yr, rcond=None)
        resid = yr - Xr @ beta
        return ThetaLM(beta=beta, sigma2=float(resid @ resid) / keep.size)
    if not isinstance(data, ClusteredData):
        raise ValidationError(f"unsupported data type {type(data).__name__}")
    if subset.kind != "clusters":
        raise ValidationError("clustered subsets index clusters")
    reduced = data.without_clusters(subset.ids)
    kwargs = dict(fit_kwargs)
    if fit is not None and "init" not in kwargs:
        kwargs["init"] = fit.theta_hat
    if fit is not None and "info_mode" not in kwargs:
        kwargs["info_mode"] = fit.info_mode
    try:
        return fit_lmm_em(reduced, **kwargs).theta_hat
    except RankDeficientDesign as err:
        raise SubsetTooLarge(
            f"deleting clusters {subset.ids} leaves a rank-deficient design"
        ) from err


def cook_distance(fit: FitResult, theta_deleted: Theta,
                  subset: SubsetIndex | None = None) -> float:
    """Quadratic-form distance between the full and deleted estimates.

    Uses the full-data information matrix (interest block when a selector
    is set); the curvature is never recomputed from the reduced data.
    """
    d = fit.interest_delta(theta_deleted)
    W = fit.interest_weight()
    cd = float(d @ (W @ d))
    return max(cd, 0.0)


def cook_lm_closed(data: CrossSectionData, fit: FitResult,
                   subset: SubsetIndex) -> float:
    """Closed-form linear model distance for coefficient interest.

    Residuals and leverage of the deleted block only; no refit.
    """
    _require_beta_interest(fit)
    geo = deletion_geometry(data, fit, subset)
    core = np.eye(len(subset.ids)) - geo.h_matrix
    u = solve_spd(core, geo.e_hat, LeverageOne, "I - H_I")
    val = float(u @ (geo.h_matrix @ u)) / fit.theta_hat.sigma2
    return max(val, 0.0)


def cd_spectral(geometry: DeletionGeometry, sigma2_hat: float) -> float:
    """Spectral form: sum of eigval/(1-eigval) times squared rotated residuals."""
    if sigma2_hat <= 0.0:
        raise ValidationError("sigma2_hat must be positive")
    lam = geometry.eigvals
    ratio = lam / (1.0 - lam)
    return float((ratio * geometry.h_vec**2).sum()) / sigma2_hat
