"""Parametric bootstrap calibration of the deletion distances.

Replicates are simulated from the fitted model, either holding the
covariate structure fixed (conditional) or resampling it from the data
(unconditional).  Each replicate index owns an independent random stream
derived from the root seed, so results are identical no matter how many
threads compute them or in which order.

``mode="exact"`` refits every replicate; ``mode="first_order"`` evaluates
the refit-free sandwich form with the one-step-corrected score, which
leaves the expensive variance re-estimation out of the loop.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from ._linalg import numerical_rank, solve_spd, spd_factor, spd_solve
from .data import ClusteredData, CrossSectionData
from .deletion import SubsetIndex, cook_distance, cook_lm_closed, refit_without
from .approx import first_order_cd, lm_pieces, lmm_pieces
from .exceptions import (
    DegenerateReplicates,
    NumericalError,
    ValidationError,
    ZeroSpread,
)
from .fitting import LmmWorkspace, fit_lmm_em, fit_ols
from .params import FitResult

# Sub-stream tag separating replicate draws from any other consumer of the
# same root seed.
_STREAM_REPLICATE = 101


@dataclass(frozen=True)
class ZStructure:
    """Covariate-side structure for replicate simulation.

    ``conditional=True`` keeps the observed design fixed; otherwise rows
    (or whole clusters) are resampled from the data with replacement
    before each replicate's responses are drawn.
    """

    data: object
    conditional: bool = True


@dataclass(frozen=True)
class BootstrapSummary:
    """Location and spread of one subset's replicate distances."""

    subset_label: str
    n_replicates: int
    mean: float
    std: float
    median: float
    mstd: float
    replicate_cds: np.ndarray


def _replicate_rng(seed: int, replicate_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(_STREAM_REPLICATE, int(replicate_index)))
    return np.random.default_rng(ss)


def _draw_y(fit: FitResult, data, rng: np.random.Generator) -> np.ndarray:
    theta = fit.theta_hat
    if fit.model == "lm":
        n = data.n
        return data.X @ theta.beta + np.sqrt(theta.sigma2) * rng.standard_normal(n)
    b = np.sqrt(theta.sigma_b2) * rng.standard_normal(data.n_clusters)
    eps = np.sqrt(theta.sigma_y2) * rng.standard_normal(data.n_obs)
    return data.X @ theta.beta + np.repeat(b, data.sizes) + eps


def _resample_structure(data, rng: np.random.Generator):
    """Redraw the covariate side i.i.d. from the observed units."""
    for _ in range(100):
        if isinstance(data, CrossSectionData):
            idx = rng.integers(0, data.n, size=data.n)
            Xs = data.X[idx]
            if numerical_rank(Xs) == data.p:
                return Xs, idx
        else:
            idx = rng.integers(0, data.n_clusters, size=data.n_clusters)
            Xs = np.concatenate([data.cluster_X(i) for i in idx], axis=0)
            if numerical_rank(Xs) == data.p:
                return Xs, idx
    raise NumericalError("covariate resampling kept producing rank-deficient designs")


def _build_resampled(data, rng: np.random.Generator):
    Xs, idx = _resample_structure(data, rng)
    if isinstance(data, CrossSectionData):
        return CrossSectionData(np.zeros(data.n), Xs), None
    sizes = data.sizes[idx]
    placeholder = np.zeros(int(sizes.sum()))
    return ClusteredData(tuple(range(len(idx))), placeholder, Xs, sizes), None


def simulate_replicate(fit: FitResult, z: ZStructure, seed: int,
                       replicate_index: int):
    """One synthetic dataset from the fitted model.

    Deterministic in (seed, replicate_index): the same pair always yields
    the same dataset, independent of threading or call order.
    """
    rng = _replicate_rng(seed, replicate_index)
    data = z.data
    if not z.conditional:
        shell, _ = _build_resampled(data, rng)
        y = _draw_y(fit, shell, rng)
        if isinstance(shell, CrossSectionData):
            return CrossSectionData(y, shell.X)
        return ClusteredData(shell.cluster_ids, y, shell.X, shell.sizes)
    y = _draw_y(fit, data, rng)
    if isinstance(data, CrossSectionData):
        return CrossSectionData(y, data.X)
    return ClusteredData(data.cluster_ids, y, data.X, data.sizes)


class _LmConditionalPrep:
    """Fixed-design pieces for fast linear model replicate distances."""

    def __init__(self, data: CrossSectionData, fit: FitResult,
                 subsets: list[SubsetIndex]):
        self.data = data
        self.fit = fit
        X = data.X
        R = np.linalg.qr(X, mode="r")
        self.R = R
        self.kernels = []
        for sub in subsets:
            ids = np.asarray(sub.ids, dtype=int)
            W = sla.solve_triangular(R.T, X[ids].T, lower=True)
            H = W.T @ W
            core = np.eye(ids.size) - H
            inner = solve_spd(core, H)
            kernel = solve_spd(core, inner.T).T
            self.kernels.append((ids, 0.5 * (kernel + kernel.T)))

    def cds(self, y: np.ndarray, mode: str) -> np.ndarray:
        X = self.data.X
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        # Replicate distances keep the scaling metric of the analysis fit;
        # only the point estimates are recomputed from the replicate response.
        # For this model the one-step correction is exact, so both modes
        # produce the same number.
        sigma2 = self.fit.theta_hat.sigma2
        out = np.empty(len(self.kernels))
        for j, (ids, kernel) in enumerate(self.kernels):
            e = resid[ids]
            out[j] = max(float(e @ (kernel @ e)), 0.0) / sigma2
        return out


class _LmmConditionalPrep:
    """Fixed-design pieces for fast random intercept replicate distances."""

    def __init__(self, data: ClusteredData, fit: FitResult,
                 subsets: list[SubsetIndex], mode: str):
        self.data = data
        self.fit = fit
        self.subsets = subsets
        self.mode = mode
        self.ws = LmmWorkspace(data)
        theta = fit.theta_hat
        # Scaling metric of the analysis fit, shared by both modes: replicate
        # estimates move, the metric does not.
        self.W = self.ws.beta_information(theta.sigma_b2, theta.sigma_y2)
        if mode == "first_order":
            from .perturbation import lmm_cluster_grams

            grams = lmm_cluster_grams(data, fit)
            F = self.W
            self.sandwiches = []
            for sub in subsets:
                s = grams[list(sub.ids)].sum(axis=0)
                A = F - s
                B = solve_spd(A, F)
                M = solve_spd(A, B.T).T
                self.sandwiches.append(0.5 * (M + M.T))
            m = self.ws.sizes
            lam1 = theta.sigma_y2 + m * theta.sigma_b2
            self.shrink = theta.sigma_b2 / lam1
        else:
            self.reduced = []
            for sub in subsets:
                reduced = data.without_clusters(sub.ids)
                keep = [i for i in range(data.n_clusters) if i not in set(sub.ids)]
                rows = np.concatenate(
                    [np.arange(data.starts[i], data.starts[i + 1]) for i in keep]
                )
                self.reduced.append((reduced, LmmWorkspace(reduced), rows))

    def cds(self, y: np.ndarray) -> np.ndarray:
        data, fit, ws = self.data, self.fit, self.ws
        theta = fit.theta_hat
        out = np.empty(len(self.subsets))
        if self.mode == "first_order":
            beta_tilde = ws.gls_beta(theta.sigma_b2, theta.sigma_y2, y=y)
            r = y - data.X @ beta_tilde
            s = ws.cluster_sums(r)
            Xr = np.add.reduceat(data.X * r[:, None], ws.starts, axis=0)
            fvec = (Xr - (self.shrink * s)[:, None] * ws.C) / theta.sigma_y2
            for j, sub in enumerate(self.subsets):
                f = fvec[list(sub.ids)].sum(axis=0)
                out[j] = max(float(f @ (self.sandwiches[j] @ f)), 0.0)
            return out
        fit_s = fit_lmm_em(data, y=y, workspace=ws, init=theta,
                           info_mode=fit.info_mode, interest="beta")
        for j, (reduced, ws_r, rows) in enumerate(self.reduced):
            theta_del = fit_lmm_em(
                reduced, y=y[rows], workspace=ws_r, init=fit_s.theta_hat,
                info_mode=fit.info_mode, interest="beta",
            ).theta_hat
            d = fit_s.interest_delta(theta_del)
            out[j] = max(float(d @ (self.W @ d)), 0.0)
        return out


def _unconditional_cds(data, fit, subsets, mode, rng) -> np.ndarray:
    shell, _ = _build_resampled(data, rng)
    y = _draw_y(fit, shell, rng)
    if isinstance(shell, CrossSectionData):
        data_s = CrossSectionData(y, shell.X)
    else:
        data_s = ClusteredData(shell.cluster_ids, y, shell.X, shell.sizes)
    out = np.empty(len(subsets))
    theta0 = fit.theta_hat
    if mode == "exact":
        # Estimates are refit on the replicate; the scaling metric stays at
        # the analysis fit's parameters (evaluated on the replicate design).
        if isinstance(data_s, CrossSectionData):
            fit_s = fit_ols(data_s, info_mode=fit.info_mode)
            rescale = fit_s.theta_hat.sigma2 / theta0.sigma2
            for j, sub in enumerate(subsets):
                out[j] = cook_lm_closed(data_s, fit_s, sub) * rescale
        else:
            fit_s = fit_lmm_em(data_s, init=theta0,
                               info_mode=fit.info_mode, interest="beta")
            W = LmmWorkspace(data_s).beta_information(
                theta0.sigma_b2, theta0.sigma_y2)
            for j, sub in enumerate(subsets):
                theta_del = refit_without(data_s, sub, fit=fit_s,
                                          interest="beta")
                d = fit_s.interest_delta(theta_del)
                out[j] = max(float(d @ (W @ d)), 0.0)
    else:
        for j, sub in enumerate(subsets):
            if isinstance(data_s, CrossSectionData):
                pieces = lm_pieces(data_s, fit, sub, y=data_s.y)
            else:
                pieces = lmm_pieces(data_s, fit, sub, y=data_s.y)
            out[j] = first_order_cd(pieces)
    return out


def _normalize_mode(mode, model: str) -> str:
    if mode is None:
        return "exact" if model == "lm" else "first_order"
    if mode == "approx":
        return "first_order"
    if mode not in ("exact", "first_order"):
        raise ValidationError(f"unknown bootstrap mode {mode!r}")
    return mode


def summarize_replicates(subset_label: str, cds: np.ndarray) -> BootstrapSummary:
    cds = np.asarray(cds, dtype=float)
    std = float(cds.std(ddof=1))
    if std == 0.0:
        raise DegenerateReplicates(
            f"all {cds.size} replicate distances for subset {subset_label} are equal"
        )
    med = float(np.median(cds))
    mstd = float(np.median(np.abs(cds - med)))
    out = cds.copy()
    out.setflags(write=False)
    return BootstrapSummary(
        subset_label=subset_label,
        n_replicates=cds.size,
        mean=float(cds.mean()),
        std=std,
        median=med,
        mstd=mstd,
        replicate_cds=out,
    )


def bootstrap_summaries(data, fit: FitResult, subsets: list[SubsetIndex],
                        n_replicates: int = 100, mode: str | None = None,
                        conditional: bool = True, seed: int = 0,
                        threads: int = 1) -> list[BootstrapSummary]:
    """Replicate deletion distances and their per-subset summaries.

    The subset list is computed for every replicate in one pass.  With
    ``threads > 1`` replicates are computed concurrently; the result is
    byte-identical to the single-threaded one because each replicate owns
    a counter-derived random stream and lands in its own output slot.
    """
    if n_replicates < 2:
        raise ValidationError("need at least 2 replicates")
    if not subsets:
        raise ValidationError("need at least one subset")
    mode = _normalize_mode(mode, fit.model)

    if conditional:
        if isinstance(data, CrossSectionData):
            prep = _LmConditionalPrep(data, fit, subsets)

            def task(k: int) -> np.ndarray:
                y = _draw_y(fit, data, _replicate_rng(seed, k))
                return prep.cds(y, mode)
        else:
            prep = _LmmConditionalPrep(data, fit, subsets, mode)

            def task(k: int) -> np.ndarray:
                y = _draw_y(fit, data, _replicate_rng(seed, k))
                return prep.cds(y)
    else:

        def task(k: int) -> np.ndarray:
            return _unconditional_cds(data, fit, subsets, mode,
                                      _replicate_rng(seed, k))

    all_cds = np.empty((len(subsets), n_replicates))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            for k, col in zip(range(n_replicates),
                              pool.map(task, range(n_replicates))):
                all_cds[:, k] = col
    else:
        for k in range(n_replicates):
            all_cds[:, k] = task(k)

    return [
        summarize_replicates(sub.label, all_cds[j])
        for j, sub in enumerate(subsets)
    ]


def scaled_distances(cd_observed: float, summary: BootstrapSummary) -> tuple[float, float]:
    """Mean/std and median/mstd standardizations of one observed distance."""
    if summary.std == 0.0:
        raise ZeroSpread("replicate standard deviation is zero")
    if summary.mstd == 0.0:
        raise ZeroSpread("replicate median absolute deviation is zero")
    s1 = (cd_observed - summary.mean) / summary.std
    s2 = (cd_observed - summary.median) / summary.mstd
    return float(s1), float(s2)


@dataclass(frozen=True)
class InfluenceProbabilities:
    """Replicate-calibrated influence probabilities per subset."""

    p_a: np.ndarray
    p_b: np.ndarray
    p_c: np.ndarray


def influence_probabilities(observed_scaled: np.ndarray,
                            replicate_scaled: np.ndarray,
                            observed_cd: np.ndarray) -> InfluenceProbabilities:
    """Three calibration probabilities from scaled replicate distances.

    ``p_a`` compares each subset with its own replicate distribution,
    ``p_b`` pools the scaled replicates of every subset in the list, and
    ``p_c`` ranks the observed distances among themselves.  Ties count as
    covered, so each probability is a multiple of one over its comparison
    count.
    """
    obs = np.asarray(observed_scaled, dtype=float)
    rep = np.asarray(replicate_scaled, dtype=float)
    cd = np.asarray(observed_cd, dtype=float)
    if rep.ndim != 2 or rep.shape[0] != obs.shape[0] or cd.shape != obs.shape:
        raise ValidationError("probability inputs disagree on the subset count")
    K = obs.shape[0]
    p_a = (rep <= obs[:, None]).mean(axis=1)
    pooled = rep.ravel()
    p_b = np.array([(pooled <= o).mean() for o in obs])
    if K > 1:
        p_c = np.array([
            (np.delete(cd, k) <= cd[k]).mean() for k in range(K)
        ])
    else:
        p_c = np.full(1, np.nan)
    return InfluenceProbabilities(p_a=p_a, p_b=p_b, p_c=p_c)
