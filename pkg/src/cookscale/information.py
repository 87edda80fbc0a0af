"""Log-likelihoods, scores, and information matrices per independent unit.

A unit is a row for the cross-sectional model and a whole cluster for the
random intercept model.  ``unit_hessians`` follow the information
convention: each entry is the negated second derivative of that unit's
log-likelihood, so the total information is simply their sum.

``interest="beta"`` restricts everything to the regression block with the
variance parameters frozen at their supplied values; observed and expected
versions coincide there for both families.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClusteredData, CrossSectionData
from .exceptions import DimensionMismatch, ValidationError
from .params import Theta, ThetaLM, ThetaLMM

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class InformationParts:
    """Total information plus its per-unit decomposition at one theta."""

    f_n: np.ndarray
    unit_scores: np.ndarray
    unit_hessians: np.ndarray

    @property
    def total_score(self) -> np.ndarray:
        return self.unit_scores.sum(axis=0)


def _check_pair(data, theta) -> str:
    if isinstance(data, CrossSectionData) and isinstance(theta, ThetaLM):
        model = "lm"
    elif isinstance(data, ClusteredData) and isinstance(theta, ThetaLMM):
        model = "lmm"
    else:
        raise DimensionMismatch(
            f"data {type(data).__name__} and parameters {type(theta).__name__} "
            "belong to different families"
        )
    if theta.p != data.p:
        raise DimensionMismatch(f"theta has p={theta.p} but data has p={data.p}")
    return model


def total_loglik(data, theta: Theta) -> float:
    """Marginal Gaussian log-likelihood of the full dataset."""
    model = _check_pair(data, theta)
    if model == "lm":
        r = data.y - data.X @ theta.beta
        n = data.n
        return -0.5 * (n * (_LOG_2PI + np.log(theta.sigma2)) + r @ r / theta.sigma2)
    ll = 0.0
    for i in range(data.n_clusters):
        ll += unit_loglik(data, theta, i)
    return float(ll)


def unit_loglik(data, theta: Theta, i: int) -> float:
    """Log-likelihood contribution of one independent unit."""
    model = _check_pair(data, theta)
    if model == "lm":
        e = data.y[i] - data.X[i] @ theta.beta
        return float(-0.5 * (_LOG_2PI + np.log(theta.sigma2) + e * e / theta.sigma2))
    m = int(data.sizes[i])
    r = data.cluster_y(i) - data.cluster_X(i) @ theta.beta
    lam1 = theta.sigma_y2 + m * theta.sigma_b2
    s = float(r.sum())
    q = float(r @ r)
    logdet = (m - 1) * np.log(theta.sigma_y2) + np.log(lam1)
    quad = (q - (theta.sigma_b2 / lam1) * s * s) / theta.sigma_y2
    return float(-0.5 * (m * _LOG_2PI + logdet + quad))


def _lm_parts(data: CrossSectionData, theta: ThetaLM, mode: str, interest: str):
    X, y = data.X, data.y
    s2 = theta.sigma2
    e = y - X @ theta.beta
    n, p = data.n, data.p
    if interest == "beta":
        scores = X * (e / s2)[:, None]
        hess = X[:, :, None] * X[:, None, :] / s2
        return scores, hess
    q = p + 1
    scores = np.zeros((n, q))
    scores[:, :p] = X * (e / s2)[:, None]
    scores[:, p] = -0.5 / s2 + e * e / (2.0 * s2 * s2)
    hess = np.zeros((n, q, q))
    hess[:, :p, :p] = X[:, :, None] * X[:, None, :] / s2
    if mode == "observed":
        cross = X * (e / s2**2)[:, None]
        hess[:, :p, p] = cross
        hess[:, p, :p] = cross
        hess[:, p, p] = e * e / s2**3 - 0.5 / s2**2
    else:
        hess[:, p, p] = 0.5 / s2**2
    return scores, hess


def _lmm_rinv_apply(v: np.ndarray, sb2: float, sy2: float, lam1: float) -> np.ndarray:
    return (v - (sb2 / lam1) * v.sum(axis=0)) / sy2


def _lmm_parts(data: ClusteredData, theta: ThetaLMM, mode: str, interest: str):
    p = data.p
    sb2, sy2 = theta.sigma_b2, theta.sigma_y2
    n = data.n_clusters
    if interest == "beta":
        q = p
    else:
        q = p + 2
    scores = np.zeros((n, q))
    hess = np.zeros((n, q, q))
    for i in range(n):
        m = int(data.sizes[i])
        Xi = data.cluster_X(i)
        r = data.cluster_y(i) - Xi @ theta.beta
        lam1 = sy2 + m * sb2
        Rr = _lmm_rinv_apply(r, sb2, sy2, lam1)
        XtRX = Xi.T @ _lmm_rinv_apply(Xi, sb2, sy2, lam1)
        scores[i, :p] = Xi.T @ Rr
        hess[i, :p, :p] = XtRX
        if interest == "beta":
            continue
        s1 = float(r.sum())
        qq = float(r @ r)
        c1sq = s1 * s1 / m
        # score for the variance components
        tr_b = m / lam1
        tr_y = 1.0 / lam1 + (m - 1) / sy2
        quad_b = (s1 / lam1) ** 2
        quad_y = c1sq / lam1**2 + (qq - c1sq) / sy2**2
        scores[i, p] = -0.5 * (tr_b - quad_b)
        scores[i, p + 1] = -0.5 * (tr_y - quad_y)
        if mode == "expected":
            hess[i, p, p] = 0.5 * (m / lam1) ** 2
            hess[i, p, p + 1] = hess[i, p + 1, p] = 0.5 * m / lam1**2
            hess[i, p + 1, p + 1] = 0.5 * (1.0 / lam1**2 + (m - 1) / sy2**2)
        else:
            RRr = _lmm_rinv_apply(Rr, sb2, sy2, lam1)
            ones_Rr = float(Rr.sum())
            ones_RRr = float(RRr.sum())
            cb = Xi.T @ (np.ones(m) * ones_Rr) / lam1
            hess[i, :p, p] = cb
            hess[i, p, :p] = cb
            hess[i, :p, p + 1] = Xi.T @ RRr
            hess[i, p + 1, :p] = hess[i, :p, p + 1]
            hess[i, p, p] = ones_Rr**2 * (m / lam1) - 0.5 * (m / lam1) ** 2
            hess[i, p, p + 1] = ones_Rr * ones_RRr - 0.5 * m / lam1**2
            hess[i, p + 1, p] = hess[i, p, p + 1]
            quad_yy = c1sq / lam1**3 + (qq - c1sq) / sy2**3
            hess[i, p + 1, p + 1] = quad_yy - 0.5 * (1.0 / lam1**2 + (m - 1) / sy2**2)
    return scores, hess


def information_matrices(data, theta: Theta, mode: str = "observed",
                         interest: str = "full") -> InformationParts:
    """Scores and information contributions per unit at ``theta``.

    Returns the total information (sum of the per-unit negated hessians)
    together with the per-unit pieces.  ``mode`` selects observed versus
    expected curvature; ``interest`` is ``"full"`` or ``"beta"``.
    """
    model = _check_pair(data, theta)
    if mode not in ("observed", "expected"):
        raise ValidationError(f"unknown information mode {mode!r}")
    if interest not in ("full", "beta"):
        raise ValidationError(f"unknown interest {interest!r}")
    if model == "lm":
        scores, hess = _lm_parts(data, theta, mode, interest)
    else:
        scores, hess = _lmm_parts(data, theta, mode, interest)
    f_n = hess.sum(axis=0)
    f_n = 0.5 * (f_n + f_n.T)
    return InformationParts(f_n=f_n, unit_scores=scores, unit_hessians=hess)
