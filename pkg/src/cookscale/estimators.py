"""Estimator-style front ends with scikit-learn conventions.

Thin shells over the fitting and diagnostic pipeline: ``fit`` validates
arrays, fits the underlying model, and exposes results as trailing
underscore attributes.  No implicit intercept anywhere; include a
constant column explicitly.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import ClusteredData, CrossSectionData
from .deletion import enumerate_subsets, make_subset
from .exceptions import ValidationError
from .fitting import fit_lmm_em, fit_ols
from .report import build_report


def _clustered_from_arrays(X, y, groups) -> ClusteredData:
    groups = np.asarray(groups)
    if groups.shape[0] != X.shape[0]:
        raise ValidationError("groups length must match the number of rows")
    # Stable regrouping: clusters ordered by first appearance.
    _, first = np.unique(groups, return_index=True)
    labels = groups[np.sort(first)]
    triples = []
    for lab in labels:
        mask = groups == lab
        key = lab.item() if hasattr(lab, "item") else lab
        triples.append((key, X[mask], y[mask]))
    return ClusteredData.from_clusters(triples)


class OLSModel(RegressorMixin, BaseEstimator):
    """Gaussian linear model by least squares, variance profiled."""

    def __init__(self, info_mode: str = "observed"):
        self.info_mode = info_mode

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.data_ = CrossSectionData(y, X)
        self.fit_result_ = fit_ols(self.data_, info_mode=self.info_mode)
        theta = self.fit_result_.theta_hat
        self.coef_ = theta.beta.copy()
        self.sigma2_ = theta.sigma2
        self.loglik_ = self.fit_result_.loglik
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_


class RandomInterceptModel(RegressorMixin, BaseEstimator):
    """Gaussian random intercept model by maximum likelihood."""

    def __init__(self, tol: float = 1e-8, max_iter: int = 500,
                 info_mode: str = "observed", refine: bool = True):
        self.tol = tol
        self.max_iter = max_iter
        self.info_mode = info_mode
        self.refine = refine

    def fit(self, X, y, groups=None):
        X, y = check_X_y(X, y, y_numeric=True)
        if groups is None:
            raise ValidationError("groups is required: one cluster label per row")
        self.data_ = _clustered_from_arrays(X, y, groups)
        self.fit_result_ = fit_lmm_em(
            self.data_, tol=self.tol, max_iter=self.max_iter,
            info_mode=self.info_mode, refine=self.refine,
        )
        theta = self.fit_result_.theta_hat
        self.coef_ = theta.beta.copy()
        self.sigma_b2_ = theta.sigma_b2
        self.sigma_y2_ = theta.sigma_y2
        self.loglik_ = self.fit_result_.loglik
        self.converged_ = self.fit_result_.converged
        self.n_iter_ = self.fit_result_.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Marginal mean; cluster effects integrate to zero."""
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_


class CookInfluence(BaseEstimator):
    """Deletion influence diagnostics as a fit-once estimator.

    ``fit`` builds the full per-subset report on the training data;
    ``fit_predict`` additionally returns the observed distances.
    """

    def __init__(self, model: str = "lm", subsets="auto",
                 n_replicates: int = 100, mode: str | None = None,
                 conditional: bool = True, seed: int = 0, threads: int = 1,
                 mc_draws: int | None = None, info_mode: str = "observed"):
        self.model = model
        self.subsets = subsets
        self.n_replicates = n_replicates
        self.mode = mode
        self.conditional = conditional
        self.seed = seed
        self.threads = threads
        self.mc_draws = mc_draws
        self.info_mode = info_mode

    def fit(self, X, y, groups=None):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.model == "lm":
            data = CrossSectionData(y, X)
            fit = fit_ols(data, info_mode=self.info_mode)
        elif self.model == "lmm":
            if groups is None:
                raise ValidationError("groups is required for the clustered model")
            data = _clustered_from_arrays(X, y, groups)
            fit = fit_lmm_em(data, info_mode=self.info_mode, interest="beta")
        else:
            raise ValidationError(f"unknown model {self.model!r}")
        if isinstance(self.subsets, str) and self.subsets == "auto":
            subsets = enumerate_subsets(data)
        else:
            subsets = [make_subset(data, ids) for ids in self.subsets]
        self.data_ = data
        self.fit_result_ = fit
        self.report_ = build_report(
            data, fit, subsets, n_replicates=self.n_replicates,
            mode=self.mode, conditional=self.conditional, seed=self.seed,
            threads=self.threads, mc_draws=self.mc_draws,
        )
        rows = self.report_.rows
        self.subset_ids_ = [r.subset_id for r in rows]
        self.distances_ = np.array([r.cd for r in rows])
        self.first_order_ = np.array([r.cd_tilde for r in rows])
        self.perturbations_ = np.array([r.perturbation for r in rows])
        nan = float("nan")
        self.p_a_ = np.array([nan if r.p_a is None else r.p_a for r in rows])
        self.p_b_ = np.array([nan if r.p_b is None else r.p_b for r in rows])
        self.p_c_ = np.array([nan if r.p_c is None else r.p_c for r in rows])
        return self

    def fit_predict(self, X, y, groups=None):
        return self.fit(X, y, groups=groups).distances_
