"""Fitting: least squares closed form and the iterative mixed-model fit."""
from __future__ import annotations

import json

import numpy as np
import pytest

from cookscale import (
    ClusteredData,
    CrossSectionData,
    DegenerateVariance,
    NonConvergenceWarning,
    NonIdentifiable,
    ThetaLMM,
    fit_lmm_em,
    fit_ols,
    total_loglik,
)
from conftest import make_balanced_lmm, make_lm_instance

MONOTONE_SLACK = 1e-10


def test_ols_three_point_oracle(three_point_fit):
    # Mean of (0, 0, 3) is 1; ML variance is ((1 + 1 + 4) / 3) = 2.
    assert three_point_fit.theta_hat.beta == pytest.approx([1.0], abs=1e-12)
    assert three_point_fit.theta_hat.sigma2 == pytest.approx(2.0, abs=1e-12)


def test_ols_matches_normal_equations(lm_instance, lm_fit):
    X, y = lm_instance.X, lm_instance.y
    beta_ref = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(lm_fit.theta_hat.beta, beta_ref, rtol=0, atol=1e-10)


def test_ols_residuals_orthogonal_to_design(lm_instance, lm_fit):
    resid = lm_instance.y - lm_instance.X @ lm_fit.theta_hat.beta
    bound = 1e-8 * np.linalg.norm(lm_instance.X) * np.linalg.norm(resid)
    assert np.linalg.norm(lm_instance.X.T @ resid) < bound


def test_ols_loglik_is_the_gaussian_value(lm_instance, lm_fit):
    assert lm_fit.loglik == pytest.approx(
        total_loglik(lm_instance, lm_fit.theta_hat), rel=1e-12
    )


def test_ols_perfect_fit_is_degenerate():
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    y = X @ np.array([2.0, -1.0])
    with pytest.raises(DegenerateVariance):
        fit_ols(CrossSectionData(y, X))


def test_ols_sigma_star_inverts_information(lm_fit):
    prod = lm_fit.g_n_theta @ lm_fit.sigma_star
    np.testing.assert_allclose(prod, np.eye(lm_fit.q), atol=1e-8)


@pytest.mark.parametrize("info_mode", ["observed", "expected"])
def test_ols_info_modes_are_positive_definite(lm_instance, info_mode):
    fit = fit_ols(lm_instance, info_mode=info_mode)
    assert np.linalg.eigvalsh(fit.g_n_theta).min() > 0


def test_ols_interest_selector_picks_coefficients(lm_fit):
    L = lm_fit.interest_selector
    assert L.shape == (5, 4)
    np.testing.assert_array_equal(L[:4], np.eye(4))
    np.testing.assert_array_equal(L[4], np.zeros(4))


def test_lmm_loglik_path_monotone(scenario_fit):
    path = np.asarray(scenario_fit.loglik_path)
    floors = np.maximum(1.0, np.abs(path[:-1]))
    assert np.all(np.diff(path) >= -MONOTONE_SLACK * floors)


def test_lmm_balanced_intercept_only_is_grand_mean():
    data = make_balanced_lmm(n_clusters=8, m=5, seed=3)
    fit = fit_lmm_em(data)
    # Balanced single-column designs weight every cluster equally, so the
    # generalized least squares coefficient is the plain average.
    assert fit.theta_hat.beta[0] == pytest.approx(float(data.y.mean()), abs=1e-8)


def test_lmm_warm_start_agrees_with_cold(scenario_data, scenario_fit):
    cold = scenario_fit.theta_hat
    init = ThetaLMM(cold.beta + 0.3, cold.sigma_b2 + 0.5, cold.sigma_y2 * 2.0)
    warm = fit_lmm_em(scenario_data, info_mode="expected", interest="beta",
                      init=init).theta_hat
    np.testing.assert_allclose(warm.as_vector(), cold.as_vector(),
                               rtol=1e-6, atol=1e-6)


def test_lmm_single_cluster_not_identifiable():
    data = ClusteredData.from_clusters([("a", np.ones((3, 1)), np.array([0.0, 1.0, 2.0]))])
    with pytest.raises(NonIdentifiable):
        fit_lmm_em(data)


def test_lmm_all_singletons_not_identifiable():
    data = ClusteredData.from_clusters([
        (i, np.ones((1, 1)), np.array([float(i)])) for i in range(4)
    ])
    with pytest.raises(NonIdentifiable):
        fit_lmm_em(data)


def test_lmm_exact_response_is_degenerate():
    # Response exactly linear in the design: no residual variance left.
    triples = []
    for i in range(4):
        Xi = np.column_stack([np.ones(3), np.arange(3.0) + i])
        triples.append((i, Xi, Xi @ np.array([1.0, 2.0])))
    with pytest.raises(DegenerateVariance):
        fit_lmm_em(ClusteredData.from_clusters(triples))


def test_lmm_nonconvergence_warns_and_flags():
    data = make_balanced_lmm(n_clusters=6, m=3, seed=5)
    with pytest.warns(NonConvergenceWarning):
        fit = fit_lmm_em(data, tol=1e-16, max_iter=2, refine=False)
    assert not fit.converged
    assert fit.stop_reason == "max_iter"


def test_lmm_converged_flags(scenario_fit):
    assert scenario_fit.converged
    assert scenario_fit.stop_reason in ("tol", "scoring")


def test_lmm_variance_estimates_in_range(scenario_fit):
    theta = scenario_fit.theta_hat
    assert theta.sigma_b2 >= 0.0
    assert theta.sigma_y2 > 0.0


def test_fit_result_json_document(scenario_fit):
    doc = json.loads(json.dumps(scenario_fit.to_json_dict()))
    assert doc["model"] == "lmm"
    assert set(doc) == {"model", "theta_hat", "g_n_theta", "sigma_star",
                       "loglik", "converged", "meta"}
    assert set(doc["theta_hat"]) == {"beta", "sigma_b2", "sigma_y2"}
    q = scenario_fit.q
    assert np.asarray(doc["g_n_theta"]).shape == (q, q)
    assert doc["converged"] is True


def test_standard_errors_positive(scenario_fit):
    assert np.all(scenario_fit.standard_errors() > 0)


def test_lmm_observed_and_expected_agree_on_coefficients():
    data = make_balanced_lmm(n_clusters=8, m=4, seed=7, p=2)
    obs = fit_lmm_em(data, info_mode="observed")
    exp = fit_lmm_em(data, info_mode="expected")
    np.testing.assert_allclose(obs.theta_hat.as_vector(),
                               exp.theta_hat.as_vector(), rtol=1e-6, atol=1e-8)


def test_lmm_recovers_truth_roughly():
    rng = np.random.default_rng(11)
    n, m = 60, 5
    triples = []
    for i in range(n):
        Xi = np.column_stack([np.ones(m), rng.normal(size=m)])
        yi = Xi @ np.array([1.0, 2.0]) + rng.normal() + 0.7 * rng.normal(size=m)
        triples.append((i, Xi, yi))
    fit = fit_lmm_em(ClusteredData.from_clusters(triples))
    theta = fit.theta_hat
    assert theta.beta == pytest.approx([1.0, 2.0], abs=0.4)
    assert theta.sigma_b2 == pytest.approx(1.0, abs=0.6)
    assert theta.sigma_y2 == pytest.approx(0.49, abs=0.2)


def test_lm_instances_share_no_state():
    a = make_lm_instance(1)
    b = make_lm_instance(2)
    fit_a = fit_ols(a)
    assert not np.allclose(fit_a.theta_hat.beta, fit_ols(b).theta_hat.beta)
