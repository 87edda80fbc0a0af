"""Acceptance suite: one test per criterion, each with its runtime budget.

Each criterion is a single test function so the verbose run prints one
pass/fail line per criterion.  Heavy simulation criteria pin their seeds
and thread counts; every assertion threshold is stated inline.
"""
import subprocess
import sys
import time

import numpy as np
import pytest
from conftest import make_lm_instance
from scipy import stats

from cookscale.approx import first_order_cd, lm_pieces, qf_moments
from cookscale.bootstrap import bootstrap_summaries
from cookscale.deletion import (
    cd_spectral,
    cook_distance,
    cook_lm_closed,
    deletion_geometry,
    enumerate_subsets,
    lm_beta_downdate,
    make_subset,
    refit_without,
)
from cookscale.experiments import run_figure1, run_table1
from cookscale.fitting import fit_lmm_em, fit_ols
from cookscale.io import write_clustered
from cookscale.perturbation import (
    PerturbationSpec,
    perturb_lm_fixed,
    perturb_lmm_cluster,
    perturb_mc,
)
from cookscale.simulate import ScenarioConfig, gen_scenario

N_INSTANCES = 20
SUBSETS_PER_INSTANCE = 100


def _instances():
    return [make_lm_instance(seed) for seed in range(N_INSTANCES)]


def _random_subsets(data, rng, count):
    subs = []
    while len(subs) < count:
        k = int(rng.integers(1, 9))
        ids = rng.choice(data.n, size=k, replace=False)
        subs.append(make_subset(data, ids))
    return subs


def test_criterion_1_exact_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for data in _instances():
        fit = fit_ols(data)
        sigma2 = fit.theta_hat.sigma2
        for sub in _random_subsets(data, rng, SUBSETS_PER_INSTANCE):
            refit = cook_distance(fit, refit_without(data, sub, fit=fit))
            closed = cook_lm_closed(data, fit, sub)
            spectral = cd_spectral(deletion_geometry(data, fit, sub), sigma2)
            scale = max(refit, closed, spectral, 1e-12)
            assert abs(refit - closed) <= 1e-8 * scale
            assert abs(refit - spectral) <= 1e-8 * scale
            assert abs(closed - spectral) <= 1e-8 * scale
        # single-row coefficient downdates against direct reduced solves
        for i in range(data.n):
            down = lm_beta_downdate(data, fit, [i])
            keep = np.delete(np.arange(data.n), i)
            direct, *_ = np.linalg.lstsq(data.X[keep], data.y[keep], rcond=None)
            assert np.abs(down - direct).max() <= 1e-10
    assert time.perf_counter() - t0 < 5.0


def test_criterion_2_first_order_exactness():
    t0 = time.perf_counter()
    for data in _instances():
        fit = fit_ols(data)
        for sub in enumerate_subsets(data):
            direct = first_order_cd(lm_pieces(data, fit, sub))
            closed = cook_lm_closed(data, fit, sub)
            assert abs(direct - closed) <= 1e-10 * max(closed, 1e-12)
    assert time.perf_counter() - t0 < 1.0


def test_criterion_3_perturbation_axioms():
    t0 = time.perf_counter()
    data = make_lm_instance(0)
    fit = fit_ols(data)

    # additivity over independent rows
    rng = np.random.default_rng(7)
    for _ in range(25):
        k = int(rng.integers(2, 6))
        ids = rng.choice(data.n, size=k, replace=False)
        union = perturb_lm_fixed(data, fit, make_subset(data, ids)).value
        parts = sum(
            perturb_lm_fixed(data, fit, make_subset(data, [i])).value
            for i in ids
        )
        assert abs(union - parts) <= 1e-12 * max(union, 1.0)

    # monotonicity over nested pairs
    for _ in range(100):
        k = int(rng.integers(2, 9))
        big = rng.choice(data.n, size=k, replace=False)
        small = big[: k - 1]
        v_small = perturb_lm_fixed(data, fit, make_subset(data, small)).value
        v_big = perturb_lm_fixed(data, fit, make_subset(data, big)).value
        assert v_big >= v_small - 1e-14

    # cluster values over the clustered scenario sum to half the dimension
    cdata = gen_scenario(ScenarioConfig(n=12, seed=34))[0]
    cfit = fit_lmm_em(cdata, info_mode="expected", interest="beta")
    total = sum(
        perturb_lmm_cluster(cdata, cfit, sub).value
        for sub in enumerate_subsets(cdata)
    )
    assert abs(total - cdata.p / 2.0) <= 1e-10

    # Monte Carlo integration agrees with the closed prior expectations
    sub = make_subset(data, [2, 11, 19])
    closed = perturb_lm_fixed(data, fit, sub, interest="beta_only").value
    est, se = perturb_mc(data, fit, sub,
                         PerturbationSpec(model="lm", interest="beta_only",
                                          mc_draws=10_000), seed=1)
    assert abs(est - closed) <= 3.0 * se

    csub = make_subset(cdata, [0, 5])
    cclosed = perturb_lmm_cluster(cdata, cfit, csub).value
    cest, cse = perturb_mc(cdata, cfit, csub,
                           PerturbationSpec(model="lmm", interest="beta_only",
                                            mc_draws=10_000), seed=2)
    assert abs(cest - cclosed) <= 3.0 * cse
    assert time.perf_counter() - t0 < 30.0


def test_criterion_4_quadratic_form_moments():
    t0 = time.perf_counter()
    data = make_lm_instance(1)
    fit = fit_ols(data)
    rng = np.random.default_rng(3)
    S = 5000
    for _ in range(10):
        k = int(rng.integers(1, 6))
        sub = make_subset(data, rng.choice(data.n, size=k, replace=False))
        geom = deletion_geometry(data, fit, sub)
        # reference moments straight from the leverage block
        M = np.linalg.inv(np.eye(k) - geom.h_matrix)
        want_mean = float(np.trace(M)) - k
        want_var = 2.0 * float(np.trace((M @ geom.h_matrix) @ (M @ geom.h_matrix)))
        mean_qf, var_qf = qf_moments(geom)
        assert mean_qf == pytest.approx(want_mean, rel=1e-10)
        assert var_qf == pytest.approx(want_var, rel=1e-10)
        # empirical moments over simulated error vectors
        summ = bootstrap_summaries(data, fit, [sub], n_replicates=S,
                                   mode="first_order",
                                   seed=int(rng.integers(1 << 31)))[0]
        sim_se = np.sqrt(want_var / S)
        assert abs(summ.mean - want_mean) <= 3.0 * sim_se
        assert summ.std**2 == pytest.approx(want_var, rel=0.15)
    assert time.perf_counter() - t0 < 60.0


def test_criterion_5_nested_dominance():
    t0 = time.perf_counter()
    S = 2000
    rng = np.random.default_rng(0)
    for inst_seed in range(5):
        data = make_lm_instance(inst_seed)
        fit = fit_ols(data)
        for _ in range(4):
            k = int(rng.integers(2, 6))
            big = rng.choice(data.n, size=k, replace=False)
            small = big[: k - 1]
            subs = [make_subset(data, small), make_subset(data, big)]
            summ = bootstrap_summaries(data, fit, subs, n_replicates=S,
                                       mode="first_order",
                                       seed=100 + inst_seed)
            a = summ[0].replicate_cds
            b = summ[1].replicate_cds
            pooled = np.concatenate([a, b])
            for q in np.arange(0.1, 0.95, 0.1):
                t = np.quantile(pooled, q)
                surv_small = (a > t).mean()
                surv_big = (b > t).mean()
                slack = 2.0 * (np.sqrt(surv_small * (1 - surv_small) / S)
                               + np.sqrt(surv_big * (1 - surv_big) / S))
                assert surv_big >= surv_small - slack
    assert time.perf_counter() - t0 < 30.0


def test_criterion_6_clustered_study_aggregates():
    t0 = time.perf_counter()
    res = run_table1(n_datasets=100, n_replicates=200, seed=34, threads=8)
    cd = res.blocks["cd"]
    e_cd = res.blocks["e_cd"]

    r = stats.pearsonr(cd["mean"], res.sizes.astype(float)).statistic
    assert 0.6 <= r <= 0.95

    rho = stats.spearmanr(e_cd["mean"], res.perturbation).statistic
    assert rho > 0.9

    # per-cluster mean absolute gaps between exact and first-order values
    assert cd["madif"].max() <= 0.06
    assert e_cd["madif"].max() <= 0.07
    assert time.perf_counter() - t0 < 15 * 60.0


def test_criterion_7_swept_cluster_probabilities():
    t0 = time.perf_counter()
    rows = run_figure1(m_values=(1, 10), n_datasets=100, n_replicates=100,
                       seed=34, threads=8)
    vals = {(b, m, metric): v for b, m, metric, v in rows}

    assert vals[(0.6, 1, "p_c")] < 0.45
    assert vals[(0.6, 10, "p_c")] > 0.7
    assert 0.35 <= vals[(0.6, 1, "p_b")] <= 0.65
    assert 0.35 <= vals[(0.6, 10, "p_b")] <= 0.65
    assert vals[(6.0, 1, "p_b")] > 0.9
    assert vals[(6.0, 10, "p_b")] > 0.9
    assert time.perf_counter() - t0 < 30 * 60.0


def test_criterion_8_likelihood_ascent_and_coverage():
    t0 = time.perf_counter()
    truth = np.ones(5)
    datasets = gen_scenario(ScenarioConfig(n=200, n_datasets=50, seed=34))
    covered = 0
    for data in datasets:
        fit = fit_lmm_em(data, info_mode="expected")
        path = np.asarray(fit.loglik_path)
        assert path.size >= 2
        assert np.all(np.diff(path) >= -1e-8)
        theta = fit.theta_hat.as_vector()
        se = fit.standard_errors()
        if np.all(np.abs(theta - truth) <= 3.0 * se):
            covered += 1
    assert covered >= 45  # at least 90% of 50 replications
    assert time.perf_counter() - t0 < 5 * 60.0


def test_criterion_9_thread_count_determinism(tmp_path):
    t0 = time.perf_counter()
    data = gen_scenario(ScenarioConfig(n=12, seed=34))[0]
    src = str(tmp_path / "data.csv")
    write_clustered(data, src)
    reports = []
    for threads in (1, 4, 8):
        prefix = str(tmp_path / f"rep_t{threads}")
        proc = subprocess.run(
            [sys.executable, "-m", "cookscale.cli", "diagnose",
             "--data", src, "--model", "lmm", "--S", "100", "--seed", "7",
             "--threads", str(threads), "--out", prefix],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        reports.append((open(prefix + ".csv", "rb").read(),
                        open(prefix + ".json", "rb").read()))
    assert reports[0] == reports[1] == reports[2]
    assert time.perf_counter() - t0 < 2 * 60.0
