"""Estimator front ends: parameter handling, fitting, diagnostic parity."""
import numpy as np
import pytest

from cookscale import CookInfluence, OLSModel, RandomInterceptModel
from cookscale.deletion import cook_lm_closed, make_subset
from cookscale.exceptions import ValidationError
from cookscale.fitting import fit_lmm_em, fit_ols


def _lmm_arrays(seed=0, n_clusters=8, m=4):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n_clusters * m),
                         rng.normal(size=n_clusters * m)])
    groups = np.repeat(np.arange(n_clusters), m)
    b = rng.normal(scale=1.0, size=n_clusters)
    y = X @ np.array([1.0, 0.5]) + b[groups] + rng.normal(size=X.shape[0])
    return X, y, groups


def test_params_round_trip():
    est = OLSModel(info_mode="expected")
    assert est.get_params() == {"info_mode": "expected"}
    est.set_params(info_mode="observed")
    assert est.info_mode == "observed"

    rim = RandomInterceptModel(tol=1e-6, max_iter=50)
    params = rim.get_params()
    assert params["tol"] == 1e-6
    assert params["max_iter"] == 50
    rim.set_params(refine=False)
    assert rim.refine is False

    ci = CookInfluence(model="lmm", n_replicates=7)
    assert ci.get_params()["n_replicates"] == 7


def test_ols_matches_direct_fit(lm_instance):
    est = OLSModel().fit(lm_instance.X, lm_instance.y)
    direct = fit_ols(lm_instance)
    np.testing.assert_allclose(est.coef_, direct.theta_hat.beta, atol=1e-12)
    assert est.sigma2_ == pytest.approx(direct.theta_hat.sigma2, abs=1e-12)
    assert est.loglik_ == pytest.approx(direct.loglik, abs=1e-10)
    pred = est.predict(lm_instance.X)
    np.testing.assert_allclose(pred, lm_instance.X @ est.coef_, atol=1e-12)


def test_random_intercept_matches_direct_fit():
    X, y, groups = _lmm_arrays(3)
    est = RandomInterceptModel().fit(X, y, groups=groups)
    direct = fit_lmm_em(est.data_)
    np.testing.assert_allclose(est.coef_, direct.theta_hat.beta, atol=1e-10)
    assert est.sigma_b2_ == pytest.approx(direct.theta_hat.sigma_b2, abs=1e-10)
    assert est.sigma_y2_ == pytest.approx(direct.theta_hat.sigma_y2, abs=1e-10)
    assert est.converged_
    assert est.n_iter_ >= 1
    np.testing.assert_allclose(est.predict(X), X @ est.coef_, atol=1e-12)


def test_random_intercept_requires_groups():
    X, y, _ = _lmm_arrays(1)
    with pytest.raises(ValidationError):
        RandomInterceptModel().fit(X, y)
    with pytest.raises(ValidationError):
        CookInfluence(model="lmm").fit(X, y)


def test_groups_length_checked():
    X, y, groups = _lmm_arrays(2)
    with pytest.raises(ValidationError):
        RandomInterceptModel().fit(X, y, groups=groups[:-1])


def test_group_order_is_first_appearance():
    X, y, groups = _lmm_arrays(4)
    # scramble the labels: cluster identity must follow first appearance
    relabeled = np.array(["c%d" % g for g in groups])
    est = RandomInterceptModel().fit(X, y, groups=relabeled)
    assert list(est.data_.cluster_ids) == ["c%d" % g for g in
                                           dict.fromkeys(groups.tolist())]


def test_cook_influence_parity_with_direct_pipeline(lm_instance, lm_fit):
    est = CookInfluence(model="lm", n_replicates=20, seed=5)
    est.fit(lm_instance.X, lm_instance.y)
    assert len(est.subset_ids_) == lm_instance.n
    want = np.array([
        cook_lm_closed(lm_instance, lm_fit, make_subset(lm_instance, [i]))
        for i in range(lm_instance.n)
    ])
    np.testing.assert_allclose(est.distances_, want, atol=1e-12)
    np.testing.assert_allclose(est.first_order_, want, rtol=1e-9)
    assert est.report_.meta["S"] == 20
    assert np.isfinite(est.p_a_).all()
    assert ((est.p_a_ >= 0) & (est.p_a_ <= 1)).all()


def test_cook_influence_explicit_subsets(lm_instance):
    est = CookInfluence(model="lm", subsets=[[0], [1, 2]], n_replicates=0)
    est.fit(lm_instance.X, lm_instance.y)
    assert est.subset_ids_ == ["0", "1,2"]
    assert np.isnan(est.p_a_).all()  # no replicates requested
    assert np.isfinite(est.distances_).all()


def test_cook_influence_fit_predict(lm_instance):
    est = CookInfluence(model="lm", n_replicates=0)
    out = est.fit_predict(lm_instance.X, lm_instance.y)
    np.testing.assert_array_equal(out, est.distances_)


def test_cook_influence_lmm():
    X, y, groups = _lmm_arrays(6)
    est = CookInfluence(model="lmm", n_replicates=10, seed=2)
    est.fit(X, y, groups=groups)
    assert len(est.subset_ids_) == 8
    assert est.report_.meta["model"] == "lmm"
    assert est.perturbations_.sum() == pytest.approx(X.shape[1] / 2.0,
                                                     abs=1e-10)


def test_cook_influence_unknown_model(lm_instance):
    with pytest.raises(ValidationError):
        CookInfluence(model="huh").fit(lm_instance.X, lm_instance.y)


def test_cook_influence_is_seed_deterministic(lm_instance):
    a = CookInfluence(model="lm", n_replicates=15, seed=9).fit(
        lm_instance.X, lm_instance.y)
    b = CookInfluence(model="lm", n_replicates=15, seed=9).fit(
        lm_instance.X, lm_instance.y)
    np.testing.assert_array_equal(a.p_a_, b.p_a_)
    np.testing.assert_array_equal(a.p_b_, b.p_b_)
