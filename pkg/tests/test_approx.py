"""Refit-free distance, expected-distance trace, and quadratic-form moments."""
import numpy as np
import pytest
from conftest import make_balanced_lmm, make_lm_instance

from cookscale import ClusteredData
from cookscale.approx import (
    FirstOrderPieces,
    expected_cd_trace,
    first_order_cd,
    lm_pieces,
    lmm_pieces,
    qf_moments,
)
from cookscale.deletion import (
    DeletionGeometry,
    cook_lm_closed,
    deletion_geometry,
    enumerate_subsets,
    make_subset,
)
from cookscale.exceptions import DimensionMismatch, NotInvertible, ValidationError
from cookscale.fitting import fit_lmm_em, fit_ols
from cookscale.information import information_matrices
from cookscale.params import ThetaLMM


def test_first_order_equals_closed_form_for_every_row(lm_instance, lm_fit):
    for sub in enumerate_subsets(lm_instance):
        direct = first_order_cd(lm_pieces(lm_instance, lm_fit, sub))
        closed = cook_lm_closed(lm_instance, lm_fit, sub)
        assert direct == pytest.approx(closed, rel=1e-10, abs=1e-14)


def test_first_order_equals_closed_form_for_blocks(lm_instance, lm_fit):
    rng = np.random.default_rng(5)
    for _ in range(20):
        k = int(rng.integers(2, 6))
        ids = rng.choice(lm_instance.n, size=k, replace=False)
        sub = make_subset(lm_instance, ids)
        direct = first_order_cd(lm_pieces(lm_instance, lm_fit, sub))
        closed = cook_lm_closed(lm_instance, lm_fit, sub)
        assert direct == pytest.approx(closed, rel=1e-10, abs=1e-14)


def test_first_order_zero_score_is_zero():
    F = np.diag([4.0, 2.0])
    s = np.diag([1.0, 0.5])
    pieces = FirstOrderPieces(score=np.zeros(2), hessian=s, total=F)
    assert first_order_cd(pieces) == 0.0


def test_three_point_large_residual_row(three_point, three_point_fit):
    sub = make_subset(three_point, [2])
    assert first_order_cd(lm_pieces(three_point, three_point_fit, sub)) == pytest.approx(
        1.5, abs=1e-12
    )


def test_first_order_scales_linearly_in_the_pieces():
    rng = np.random.default_rng(11)
    A = rng.normal(size=(6, 3))
    F = A.T @ A + 3.0 * np.eye(3)
    s = 0.25 * F
    f = rng.normal(size=3)
    base = first_order_cd(FirstOrderPieces(f, s, F))
    c = 2.0
    scaled = first_order_cd(FirstOrderPieces(c * f, c * s, c * F))
    assert scaled == pytest.approx(c * base, rel=1e-12)


def test_first_order_rejects_dominating_block():
    F = np.eye(2)
    with pytest.raises(NotInvertible):
        first_order_cd(FirstOrderPieces(np.ones(2), 2.0 * F, F))
    with pytest.raises(NotInvertible):
        expected_cd_trace(F, F)


def test_piece_shape_validation():
    with pytest.raises(DimensionMismatch):
        FirstOrderPieces(np.ones(3), np.eye(2), np.eye(2))
    with pytest.raises(DimensionMismatch):
        FirstOrderPieces(np.ones(2), np.eye(2), np.eye(3))
    with pytest.raises(DimensionMismatch):
        expected_cd_trace(np.eye(2), np.eye(3))


def test_qf_moments_three_point_single_row(three_point, three_point_fit):
    sub = make_subset(three_point, [0])
    geom = deletion_geometry(three_point, three_point_fit, sub)
    mean, var = qf_moments(geom)
    # One eigenvalue of 1/3: ratio is 1/2, variance twice its square.
    assert mean == pytest.approx(0.5, abs=1e-12)
    assert var == pytest.approx(0.5, abs=1e-12)


def test_qf_moments_three_point_pair(three_point, three_point_fit):
    sub = make_subset(three_point, [0, 1])
    geom = deletion_geometry(three_point, three_point_fit, sub)
    mean, var = qf_moments(geom)
    # Eigenvalues 2/3 and 0: ratios 2 and 0.
    assert mean == pytest.approx(2.0, abs=1e-12)
    assert var == pytest.approx(8.0, abs=1e-12)


def test_qf_moments_zero_leverage():
    geom = DeletionGeometry(
        h_matrix=np.zeros((2, 2)),
        eigvals=np.zeros(2),
        e_hat=np.array([0.3, -0.1]),
        h_vec=np.zeros(2),
    )
    assert qf_moments(geom) == (0.0, 0.0)


def test_expected_trace_zero_block_is_zero():
    assert expected_cd_trace(np.eye(3), np.zeros((3, 3))) == 0.0


def test_expected_trace_matches_qf_mean_for_lm(lm_instance, lm_fit):
    # With coefficient interest the expected trace and the quadratic-form
    # mean are the same number for every row subset.
    sigma2 = lm_fit.theta_hat.sigma2
    X = lm_instance.X
    F = X.T @ X / sigma2
    rng = np.random.default_rng(3)
    for _ in range(10):
        k = int(rng.integers(1, 5))
        ids = rng.choice(lm_instance.n, size=k, replace=False)
        sub = make_subset(lm_instance, ids)
        Xi = X[np.asarray(sub.ids)]
        s = Xi.T @ Xi / sigma2
        trace = expected_cd_trace(F, s)
        mean, _ = qf_moments(deletion_geometry(lm_instance, lm_fit, sub))
        assert trace == pytest.approx(mean, rel=1e-10)


def test_expected_trace_balanced_intercept_clusters():
    # Identical intercept-only clusters: each of the n clusters carries an
    # equal share, so the expected trace for one cluster is 1 / (n - 1)
    # whatever the variance components are.
    n_clusters, m = 6, 3
    rng = np.random.default_rng(0)
    triples = [
        (c, np.ones((m, 1)), rng.normal(size=m)) for c in range(n_clusters)
    ]
    data = ClusteredData.from_clusters(triples)
    theta = ThetaLMM(np.array([0.4]), 0.7, 1.3)
    parts = information_matrices(data, theta, mode="expected", interest="beta")
    trace = expected_cd_trace(parts.f_n, parts.unit_hessians[0])
    assert trace == pytest.approx(1.0 / (n_clusters - 1), rel=1e-12)


def test_lm_pieces_with_replacement_response(lm_instance, lm_fit):
    rng = np.random.default_rng(21)
    y2 = lm_instance.X @ np.array([1.0, 0.5, -0.5, 0.2]) + rng.normal(
        size=lm_instance.n
    )
    sub = make_subset(lm_instance, [4, 9])
    pieces = lm_pieces(lm_instance, lm_fit, sub, y=y2)
    # The distance of the replacement response under the original metric:
    # coefficient shift between its full and reduced least squares fits,
    # weighted by X'X over the original variance estimate.
    X = lm_instance.X
    beta_full, *_ = np.linalg.lstsq(X, y2, rcond=None)
    keep = np.setdiff1d(np.arange(lm_instance.n), [4, 9])
    beta_red, *_ = np.linalg.lstsq(X[keep], y2[keep], rcond=None)
    d = beta_full - beta_red
    want = float(d @ (X.T @ X @ d)) / lm_fit.theta_hat.sigma2
    assert first_order_cd(pieces) == pytest.approx(want, rel=1e-9)


def test_lm_pieces_wrong_response_length(lm_instance, lm_fit):
    sub = make_subset(lm_instance, [0])
    with pytest.raises(DimensionMismatch):
        lm_pieces(lm_instance, lm_fit, sub, y=np.zeros(lm_instance.n + 1))


def test_lmm_pieces_match_per_cluster_score_and_information():
    data = make_balanced_lmm(n_clusters=6, m=4, seed=7, p=2)
    fit = fit_lmm_em(data, info_mode="expected", interest="beta")
    theta = fit.theta_hat
    parts = information_matrices(data, theta, mode="expected", interest="beta")
    for c in range(data.n_clusters):
        sub = make_subset(data, [c])
        pieces = lmm_pieces(data, fit, sub)
        np.testing.assert_allclose(pieces.score, parts.unit_scores[c],
                                   rtol=0, atol=1e-9)
        np.testing.assert_allclose(pieces.hessian, parts.unit_hessians[c],
                                   rtol=0, atol=1e-9)
        np.testing.assert_allclose(pieces.total, parts.f_n, rtol=0, atol=1e-9)


def test_pieces_refuse_wrong_family(lm_instance, lm_fit):
    lmm_data = make_balanced_lmm()
    lmm_fit = fit_lmm_em(lmm_data, interest="beta")
    with pytest.raises(ValidationError):
        lmm_pieces(lm_instance, lm_fit, make_subset(lm_instance, [0]))
    with pytest.raises(ValidationError):
        lm_pieces(lmm_data, lmm_fit, make_subset(lmm_data, [0]))


def test_lm_modified_response_keeps_original_variance(three_point,
                                                      three_point_fit):
    # sigma^2 in the pieces is pinned at the analysis fit even when the
    # response changes; the score must reflect the replacement's own
    # profiled coefficients.
    y2 = np.array([1.0, 1.0, 4.0])
    sub = make_subset(three_point, [2])
    pieces = lm_pieces(three_point, three_point_fit, sub, y=y2)
    # beta_tilde = 2, residual at row 2 is 2; score = 2 / sigma2 = 1.
    assert pieces.score[0] == pytest.approx(2.0 / 2.0, abs=1e-12)
    assert pieces.hessian[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert pieces.total[0, 0] == pytest.approx(1.5, abs=1e-12)


def test_ols_fit_helper_consistency():
    # Guard the fixture helpers themselves: a fresh instance and fit agree
    # with a direct least squares solve.
    data = make_lm_instance(3)
    fit = fit_ols(data)
    beta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    np.testing.assert_allclose(fit.theta_hat.beta, beta, atol=1e-10)
