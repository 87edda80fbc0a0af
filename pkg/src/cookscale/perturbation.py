"""Degree of perturbation caused by deleting a subset.

The measure is a prior-weighted Kullback-Leibler discrepancy: how much
the predictive law of the deleted block moves when the parameters move,
averaged over a Gaussian prior centered at the estimate.  It satisfies
four axioms that the test-suite checks directly: nonnegativity, zero only
for a degenerate prior, monotonicity in the prior spread, and additivity
over independent units.

Closed forms cover the linear model (fixed and exchangeable-covariate
versions) and cluster deletion in the random intercept model; a Monte
Carlo evaluator integrates the same discrepancy numerically for
cross-checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import inv_spd, spd_factor
from .data import ClusteredData, CrossSectionData
from .deletion import SubsetIndex
from .exceptions import (
    DimensionMismatch,
    NotGaussianModel,
    SingularCovariance,
    ValidationError,
)
from .params import FitResult

DEFAULT_MC_DRAWS = 10_000


@dataclass(frozen=True)
class PerturbationValue:
    """Closed-form degree of perturbation, with the large-n shortcut.

    ``approx`` is the leverage/dimension shortcut reported alongside the
    prior-exact value; it is ``None`` where no separate shortcut exists.
    """

    value: float
    approx: float | None = None


@dataclass(frozen=True)
class PerturbationSpec:
    """Prior specification for the Monte Carlo evaluator.

    ``interest`` chooses between perturbing the full parameter vector and
    only the regression block (variances frozen at the estimate).
    ``prior_mean`` and ``prior_cov`` default to the fitted estimate and
    the matching block of the inverse information.
    """

    model: str
    interest: str = "beta_only"
    prior_mean: np.ndarray | None = None
    prior_cov: np.ndarray | None = None
    mc_draws: int = DEFAULT_MC_DRAWS

    def __post_init__(self):
        if self.model not in ("lm", "lmm"):
            raise NotGaussianModel(f"unsupported model {self.model!r}")
        if self.interest not in ("full_theta", "beta_only"):
            raise ValidationError(f"unknown interest {self.interest!r}")
        if self.mc_draws < 2:
            raise ValidationError("mc_draws must be at least 2")


def beta_prior_cov(fit: FitResult, source: str = "interest_block") -> np.ndarray:
    """Default prior covariance for the regression block.

    ``interest_block`` inverts the coefficient block of the information
    matrix (the default); ``full_inverse`` takes the coefficient block of
    the full inverse instead.
    """
    p = fit.p
    if source == "interest_block":
        return inv_spd(fit.g_n_theta[:p, :p], SingularCovariance,
                       "coefficient information block")
    if source == "full_inverse":
        return np.array(fit.sigma_star[:p, :p])
    raise ValidationError(f"unknown prior source {source!r}")


def _check_lm(data, fit, subset):
    if not isinstance(data, CrossSectionData) or fit.model != "lm":
        raise ValidationError("this closed form is for the linear model")
    if subset.kind != "rows":
        raise ValidationError("linear model subsets index rows")


def perturb_lm_fixed(data: CrossSectionData, fit: FitResult, subset: SubsetIndex,
                     interest: str = "full_theta",
                     prior_cov: np.ndarray | None = None) -> PerturbationValue:
    """Fixed-covariate linear model: exact prior expectation plus shortcut.

    Per deleted row the coefficient part is x' prior_cov x / (2 sigma2);
    with the default prior that equals half the leverage.  Under
    ``full_theta`` each row adds 1/(2n) for the variance coordinate (a
    second-order approximation: the exact log-variance expectation does
    not exist for a Gaussian prior).  The shortcut reported alongside is
    leverage/2 per row plus the same variance term.
    """
    _check_lm(data, fit, subset)
    if interest not in ("full_theta", "beta_only"):
        raise ValidationError(f"unknown interest {interest!r}")
    p = data.p
    sigma2 = fit.theta_hat.sigma2
    cov = beta_prior_cov(fit) if prior_cov is None else np.asarray(prior_cov, dtype=float)
    if cov.shape != (p, p):
        raise DimensionMismatch(f"prior covariance must be {p}x{p}")
    ids = np.asarray(subset.ids, dtype=int)
    Xi = data.X[ids]
    beta_part = 0.5 * float(np.einsum("ij,jk,ik->", Xi, cov, Xi)) / sigma2
    XtX = data.X.T @ data.X
    hdiag = np.einsum("ij,ji->i", Xi, np.linalg.solve(XtX, Xi.T))
    approx_beta = 0.5 * float(hdiag.sum())
    if interest == "beta_only":
        return PerturbationValue(value=beta_part, approx=approx_beta)
    var_part = len(ids) / (2.0 * data.n)
    return PerturbationValue(value=var_part + beta_part, approx=var_part + approx_beta)


def perturb_lm_random(data: CrossSectionData, fit: FitResult, subset: SubsetIndex,
                      interest: str = "full_theta") -> PerturbationValue:
    """Exchangeable-covariate linear model: dimension counting only.

    When the rows' covariates are draws from a common law, the prior
    expectation reduces to n(I) (1 + p) / (2n) for the full vector and
    n(I) p / (2n) for the coefficient block.
    """
    _check_lm(data, fit, subset)
    n, p, k = data.n, data.p, subset.n_obs
    if interest == "beta_only":
        v = k * p / (2.0 * n)
    elif interest == "full_theta":
        v = k * (1.0 + p) / (2.0 * n)
    else:
        raise ValidationError(f"unknown interest {interest!r}")
    return PerturbationValue(value=v, approx=v)


def lmm_cluster_grams(data: ClusteredData, fit: FitResult) -> np.ndarray:
    """Per-cluster x_i' R_i^{-1} x_i stacks at the fitted variances."""
    if not isinstance(data, ClusteredData) or fit.model != "lmm":
        raise ValidationError("cluster deletion requires the random intercept model")
    sb2 = fit.theta_hat.sigma_b2
    sy2 = fit.theta_hat.sigma_y2
    out = np.empty((data.n_clusters, data.p, data.p))
    for i in range(data.n_clusters):
        Xi = data.cluster_X(i)
        m = int(data.sizes[i])
        lam1 = sy2 + m * sb2
        cs = Xi.sum(axis=0)
        out[i] = (Xi.T @ Xi - (sb2 / lam1) * np.outer(cs, cs)) / sy2
    return out


def perturb_lmm_cluster(data: ClusteredData, fit: FitResult, subset: SubsetIndex,
                        prior_cov: np.ndarray | None = None) -> PerturbationValue:
    """Cluster deletion in the random intercept model.

    Half the trace of the deleted clusters' whitened gram against the
    coefficient prior covariance; with the default prior the values over
    all clusters sum to exactly p / 2.
    """
    if subset.kind != "clusters":
        raise ValidationError("clustered subsets index clusters")
    grams = lmm_cluster_grams(data, fit)
    cov = beta_prior_cov(fit) if prior_cov is None else np.asarray(prior_cov, dtype=float)
    if cov.shape != (data.p, data.p):
        raise DimensionMismatch(f"prior covariance must be {data.p}x{data.p}")
    S = grams[list(subset.ids)].sum(axis=0)
    return PerturbationValue(value=0.5 * float(np.trace(S @ cov)), approx=None)


def perturb_additive(values) -> float:
    """Degree of perturbation of a union of independent units: the sum."""
    vals = [v.value if isinstance(v, PerturbationValue) else float(v) for v in values]
    return float(sum(vals))


def _lm_kl_terms(data, fit, subset):
    ids = np.asarray(subset.ids, dtype=int)
    Xi = data.X[ids]
    return Xi, len(ids)


def _mc_kl_lm(deltas, sigma2_draws, Xi, k, sigma2_star):
    """KL of the deleted rows' law per draw, closed form."""
    shift = np.einsum("kp,np->kn", deltas, Xi)
    quad = (shift**2).sum(axis=1) / sigma2_star
    if sigma2_draws is None:
        return 0.5 * quad
    ratio = sigma2_draws / sigma2_star
    return 0.5 * (k * (np.log(1.0 / ratio) + ratio - 1.0) + quad)


def _mc_kl_lmm(deltas, var_draws, data, subset, theta_star):
    ids = list(subset.ids)
    p = data.p
    sb_star, sy_star = theta_star.sigma_b2, theta_star.sigma_y2
    sizes = data.sizes[ids].astype(float)
    # gram of each deleted cluster under the star variances
    quad = np.zeros(deltas.shape[0])
    for j, i in enumerate(ids):
        Xi = data.cluster_X(i)
        m = sizes[j]
        lam1 = sy_star + m * sb_star
        cs = Xi.sum(axis=0)
        S = (Xi.T @ Xi - (sb_star / lam1) * np.outer(cs, cs)) / sy_star
        quad += np.einsum("kp,pq,kq->k", deltas, S, deltas)
    if var_draws is None:
        return 0.5 * quad
    sb, sy = var_draws[:, 0], var_draws[:, 1]
    extra = np.zeros(deltas.shape[0])
    for m in sizes:
        lam1_star = sy_star + m * sb_star
        lam1 = sy + m * sb
        logdet = (m - 1.0) * np.log(sy_star / sy) + np.log(lam1_star / lam1)
        tr = (m - 1.0) * sy / sy_star + lam1 / lam1_star
        extra += logdet + tr - m
    return 0.5 * (quad + extra)


def perturb_mc(data, fit: FitResult, subset: SubsetIndex, spec: PerturbationSpec,
               seed: int = 0) -> tuple[float, float]:
    """Monte Carlo degree of perturbation under a Gaussian parameter prior.

    Draws come in antithetic pairs around the prior mean; each draw's
    inner integral is the closed-form KL discrepancy of the deleted
    block's Gaussian law.  Under ``full_theta`` the prior is truncated to
    the valid variance region by rejecting pairs that leave it.  Returns
    the estimate and its Monte Carlo standard error (over pair means).
    """
    if spec.model == "lm":
        if not isinstance(data, CrossSectionData) or fit.model != "lm":
            raise ValidationError("spec and data disagree on the model family")
    else:
        if not isinstance(data, ClusteredData) or fit.model != "lmm":
            raise ValidationError("spec and data disagree on the model family")

    p = data.p
    full = spec.interest == "full_theta"
    dim = fit.q if full else p
    mean = (fit.theta_hat.as_vector() if spec.prior_mean is None
            else np.asarray(spec.prior_mean, dtype=float))
    if full and mean.shape != (fit.q,):
        raise DimensionMismatch(f"prior mean must have length {fit.q}")
    if not full:
        mean = mean[:p] if mean.shape[0] == fit.q else mean
        if mean.shape != (p,):
            raise DimensionMismatch(f"prior mean must have length {p}")
    if spec.prior_cov is None:
        cov = np.array(fit.sigma_star) if full else beta_prior_cov(fit)
    else:
        cov = np.asarray(spec.prior_cov, dtype=float)
    if cov.shape != (dim, dim):
        raise DimensionMismatch(f"prior covariance must be {dim}x{dim}")

    # Factor allowing positive semidefinite covariances (a zero prior is legal).
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -1e-10 * max(w.max(), 1.0):
        raise SingularCovariance("prior covariance has a negative eigenvalue")
    root = V * np.sqrt(np.clip(w, 0.0, None))

    n_pairs = (spec.mc_draws + 1) // 2
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    theta_star = fit.theta_hat

    if spec.model == "lm":
        Xi, k = _lm_kl_terms(data, fit, subset)
    kl_pairs = np.empty(n_pairs)
    filled = 0
    # Rejection keeps whole pairs so the antithetic structure survives.
    while filled < n_pairs:
        todo = n_pairs - filled
        z = rng.standard_normal((todo, dim))
        eps = z @ root.T
        draws_plus = mean + eps
        draws_minus = mean - eps
        if full:
            if spec.model == "lm":
                ok = (draws_plus[:, p] > 0) & (draws_minus[:, p] > 0)
            else:
                ok = ((draws_plus[:, p] >= 0) & (draws_minus[:, p] >= 0)
                      & (draws_plus[:, p + 1] > 0) & (draws_minus[:, p + 1] > 0))
        else:
            ok = np.ones(todo, dtype=bool)
        eps = eps[ok]
        if eps.shape[0] == 0:
            continue
        take = min(eps.shape[0], todo)
        eps = eps[:take]
        both = np.concatenate([mean + eps, mean - eps], axis=0)
        deltas = both[:, :p] - mean[None, :p] if full else both - mean[None, :]
        if spec.model == "lm":
            s2_draws = both[:, p] if full else None
            kl = _mc_kl_lm(deltas, s2_draws, Xi, k, theta_star.sigma2)
        else:
            var_draws = both[:, p:] if full else None
            kl = _mc_kl_lmm(deltas, var_draws, data, subset, theta_star)
        pair_mean = 0.5 * (kl[:take] + kl[take:])
        kl_pairs[filled:filled + take] = pair_mean
        filled += take

    estimate = float(kl_pairs.mean())
    se = float(kl_pairs.std(ddof=1) / np.sqrt(n_pairs)) if n_pairs > 1 else 0.0
    return estimate, se
