"""Maximum likelihood fitting for the two model families.

``fit_ols`` handles the Gaussian linear model in closed form.
``fit_lmm_em`` fits the random intercept model by EM over the latent
intercepts, with the observed log-likelihood checked to be nondecreasing
at every iteration.  Because EM stops on a log-likelihood change
criterion, the score at the stopping point can still be noticeably
nonzero; a short Fisher-scoring refinement (on by default) pushes the
estimate to an actual stationary point while preserving monotonicity.

Everything here works on per-cluster scalar summaries, so a fit costs a
few vectorized passes per iteration regardless of cluster count.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy import optimize as sopt

from ._linalg import inv_spd, spd_factor, spd_solve
from .data import ClusteredData, CrossSectionData
from .exceptions import (
    DegenerateVariance,
    NonConvergenceWarning,
    NonIdentifiable,
    NumericalError,
    SingularCovariance,
    ValidationError,
)
from .information import information_matrices
from .params import FitResult, ThetaLM, ThetaLMM, beta_selector

_LOG_2PI = float(np.log(2.0 * np.pi))

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500

# Per-iteration slack for the monotonicity guard, scaled by |loglik|.
_MONOTONE_SLACK = 1e-10
# EM iterations before handing the tail to Fisher scoring (refine=True).
_EM_HANDOFF = 50


def _interest_selector(interest: str, q: int, p: int):
    if interest == "beta":
        return beta_selector(q, p)
    if interest == "full":
        return None
    raise ValidationError(f"unknown interest {interest!r}")


def fit_ols(data: CrossSectionData, info_mode: str = "observed",
            interest: str = "beta") -> FitResult:
    """Gaussian linear model MLE: beta by least squares, sigma2 = RSS / n."""
    X, y = data.X, data.y
    n = data.n
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    rss = float(resid @ resid)
    scale = float(y @ y) / n
    sigma2 = rss / n
    if sigma2 <= 1e-12 * max(scale, 1e-300):
        raise DegenerateVariance(
            f"residual variance {sigma2:.3e} is numerically zero; "
            "the model fits the response exactly"
        )
    theta = ThetaLM(beta, sigma2)
    loglik = -0.5 * n * (_LOG_2PI + np.log(sigma2) + 1.0)
    info = information_matrices(data, theta, mode=info_mode, interest="full")
    g = info.f_n
    sigma_star = inv_spd(g, SingularCovariance, "information matrix")
    return FitResult(
        model="lm",
        theta_hat=theta,
        g_n_theta=g,
        sigma_star=sigma_star,
        loglik=float(loglik),
        interest_selector=_interest_selector(interest, theta.q, theta.p),
        info_mode=info_mode,
        converged=True,
        n_iter=0,
        stop_reason="closed_form",
    )


class LmmWorkspace:
    """Per-dataset quantities reused across EM iterations and refits.

    All methods accept an optional replacement response sharing the
    dataset's layout, so one workspace serves every bootstrap replicate.
    """

    def __init__(self, data: ClusteredData):
        self.data = data
        self.starts = np.asarray(data.starts[:-1], dtype=np.intp)
        self.sizes = data.sizes.astype(float)
        self.XtX = data.X.T @ data.X
        self.Xty = data.X.T @ data.y
        # cluster-wise column sums of X, one row per cluster
        self.C = np.add.reduceat(data.X, self.starts, axis=0)
        self.cho_XtX = spd_factor(self.XtX, SingularCovariance, "X'X")

    def _y(self, y):
        return self.data.y if y is None else y

    def cluster_sums(self, v: np.ndarray) -> np.ndarray:
        return np.add.reduceat(v, self.starts)

    def loglik(self, beta: np.ndarray, sb2: float, sy2: float,
               y: np.ndarray | None = None) -> float:
        yy = self._y(y)
        r = yy - self.data.X @ beta
        s = self.cluster_sums(r)
        q = self.cluster_sums(r * r)
        m = self.sizes
        lam1 = sy2 + m * sb2
        logdet = float(((m - 1.0) * np.log(sy2) + np.log(lam1)).sum())
        quad = float((q - (sb2 / lam1) * s * s).sum()) / sy2
        return -0.5 * (self.data.n_obs * _LOG_2PI + logdet + quad)

    def gls_beta(self, sb2: float, sy2: float,
                 y: np.ndarray | None = None) -> np.ndarray:
        """Generalized least squares coefficients at fixed variances."""
        yy = self._y(y)
        m = self.sizes
        lam1 = sy2 + m * sb2
        w = sb2 / lam1
        A = self.XtX - self.C.T @ (self.C * w[:, None])
        b = (self.data.X.T @ yy) - self.C.T @ (w * self.cluster_sums(yy))
        return spd_solve(spd_factor(A, SingularCovariance, "X'R^{-1}X"), b)

    def beta_information(self, sb2: float, sy2: float) -> np.ndarray:
        """Sum over clusters of x_i' R_i^{-1} x_i."""
        m = self.sizes
        lam1 = sy2 + m * sb2
        w = sb2 / lam1
        return (self.XtX - self.C.T @ (self.C * w[:, None])) / sy2

    def score_and_expected_info(self, beta: np.ndarray, sb2: float, sy2: float,
                                y: np.ndarray | None = None):
        """Full-parameter score and expected information, vectorized."""
        yy = self._y(y)
        p = self.data.p
        m = self.sizes
        r = yy - self.data.X @ beta
        s = self.cluster_sums(r)
        qq = self.cluster_sums(r * r)
        lam1 = sy2 + m * sb2
        c1sq = s * s / m
        score = np.zeros(p + 2)
        score[:p] = ((self.data.X.T @ r) - self.C.T @ ((sb2 / lam1) * s)) / sy2
        score[p] = -0.5 * float((m / lam1 - (s / lam1) ** 2).sum())
        quad_y = c1sq / lam1**2 + (qq - c1sq) / sy2**2
        score[p + 1] = -0.5 * float((1.0 / lam1 + (m - 1.0) / sy2 - quad_y).sum())
        info = np.zeros((p + 2, p + 2))
        info[:p, :p] = self.beta_information(sb2, sy2)
        info[p, p] = 0.5 * float(((m / lam1) ** 2).sum())
        info[p, p + 1] = info[p + 1, p] = 0.5 * float((m / lam1**2).sum())
        info[p + 1, p + 1] = 0.5 * float((1.0 / lam1**2 + (m - 1.0) / sy2**2).sum())
        return score, info


def _check_identifiable(data: ClusteredData) -> None:
    if data.n_clusters < 2:
        raise NonIdentifiable("need at least 2 clusters to separate the variance components")
    if int(data.sizes.max()) < 2:
        raise NonIdentifiable(
            "all clusters have a single row; the intercept and residual "
            "variances are confounded"
        )


def _initial_variances(ws: LmmWorkspace, resid: np.ndarray) -> tuple[float, float]:
    m = ws.sizes
    cluster_means = ws.cluster_sums(resid) / m
    centered = resid - np.repeat(cluster_means, ws.data.sizes)
    df_within = float((m - 1.0).sum())
    if df_within > 0:
        sy2 = float(centered @ centered) / df_within
    else:
        sy2 = float(resid @ resid) / resid.shape[0]
    scale = max(float(resid @ resid) / resid.shape[0], 1e-300)
    sy2 = max(sy2, 1e-8 * scale)
    sb2 = max(float(np.var(cluster_means)), 0.0)
    return sb2, sy2


def _active_mask(score: np.ndarray, p: int, sb2: float, sy2: float,
                 yscale: float) -> np.ndarray:
    """Boolean mask of coordinates pinned at an active variance bound.

    At sigma_b2 = 0 a negative variance score is the constrained
    optimality condition, not a failure to converge; those coordinates
    drop out of both the stationarity check and the scoring step.
    """
    active = np.zeros(score.shape[0], dtype=bool)
    if sb2 <= 0.0 and score[p] < 0.0:
        active[p] = True
    if sy2 <= 1e-12 * yscale and score[p + 1] < 0.0:
        active[p + 1] = True
    return active


def _masked_score_norm(score: np.ndarray, p: int, sb2: float, sy2: float,
                       yscale: float) -> float:
    """Score norm over the coordinates not held at an active bound."""
    masked = score.copy()
    masked[_active_mask(score, p, sb2, sy2, yscale)] = 0.0
    return float(np.linalg.norm(masked))


def _profile_ratio_state(ws: LmmWorkspace, phi: float, yy: np.ndarray):
    """Closed-form likelihood maximizer at a fixed variance ratio.

    For phi = sigma_b2/sigma_y2 held fixed, the coefficients are GLS and
    the residual variance has a closed form, leaving a smooth scalar
    profile in phi alone.
    """
    beta = ws.gls_beta(phi, 1.0, y=yy)
    r = yy - ws.data.X @ beta
    s = ws.cluster_sums(r)
    m = ws.sizes
    n_obs = ws.data.n_obs
    wrss = float(r @ r) - phi * float((s * s / (1.0 + phi * m)).sum())
    sy2 = wrss / n_obs
    ll = -0.5 * (n_obs * (_LOG_2PI + 1.0 + np.log(sy2))
                 + float(np.log1p(phi * m).sum()))
    return beta, phi * sy2, sy2, ll


def _profile_ratio_rescue(ws: LmmWorkspace, yy: np.ndarray, phi_start: float):
    """Exact 1-D solve over the variance ratio.

    Joint scoring steps stall when the two variance coordinates are
    nearly confounded (many singleton clusters); the ratio profile
    removes that direction entirely.  Returns the maximizing state, or
    None when no finite ratio brackets a stationary point.
    """
    p = ws.data.p

    def sb2_score(phi: float) -> float:
        beta, sb2, sy2, _ = _profile_ratio_state(ws, phi, yy)
        return float(ws.score_and_expected_info(beta, sb2, sy2, y=yy)[0][p])

    if sb2_score(0.0) <= 0.0:
        phi_hat = 0.0
    else:
        hi = max(phi_start, 1e-2)
        for _ in range(100):
            if sb2_score(hi) < 0.0:
                break
            hi *= 4.0
        else:
            return None
        phi_hat = sopt.brentq(sb2_score, 0.0, hi, xtol=1e-14, maxiter=300)
    return _profile_ratio_state(ws, phi_hat, yy)


def _scoring_refinement(ws: LmmWorkspace, beta, sb2, sy2, ll, path, yy, yscale,
                        max_steps: int = 200):
    """Fisher-scoring cleanup after EM; strictly monotone in loglik.

    Coordinates pinned at an active variance bound are removed from the
    scoring system before solving, so the step on the free coordinates is
    a true ascent direction of the constrained problem (a joint step that
    is later clamped would not be).  Returns the refined parameters plus a
    status: ``score`` when the free-coordinate score norm met the
    stationarity target, ``floor`` when step-halving found no further
    improvement (numerical optimum), ``singular`` or ``max_steps``
    otherwise.
    """
    p = beta.shape[0]
    target = 1e-10 * max(1.0, float(ws.data.n_obs))
    status = "max_steps"
    for _ in range(max_steps):
        score, info = ws.score_and_expected_info(beta, sb2, sy2, y=yy)
        # A downhill variance score with the variance still interior makes
        # the iteration approach zero only asymptotically; snapping to the
        # bound (kept only when the loglik does not drop) ends the crawl
        # and lets the active-set mask take over.
        if sb2 > 0.0 and score[p] < 0.0:
            snap_ll = ws.loglik(beta, 0.0, sy2, y=yy)
            if snap_ll >= ll:
                sb2, ll = 0.0, snap_ll
                path.append(ll)
                score, info = ws.score_and_expected_info(beta, sb2, sy2, y=yy)
        active = _active_mask(score, p, sb2, sy2, yscale)
        free = ~active
        if float(np.linalg.norm(score[free])) <= target:
            status = "score"
            break
        try:
            reduced = spd_solve(
                spd_factor(info[np.ix_(free, free)], SingularCovariance),
                score[free],
            )
        except SingularCovariance:
            status = "singular"
            break
        step = np.zeros_like(score)
        step[free] = reduced
        improved = False
        t = 1.0
        while t >= 2.0**-30:
            cand_beta = beta + t * step[:p]
            cand_sb2 = max(sb2 + t * step[p], 0.0)
            cand_sy2 = max(sy2 + t * step[p + 1], 1e-12 * yscale)
            cand_ll = ws.loglik(cand_beta, cand_sb2, cand_sy2, y=yy)
            if cand_ll >= ll:
                improved = cand_ll > ll
                beta, sb2, sy2, ll = cand_beta, cand_sb2, cand_sy2, cand_ll
                break
            t *= 0.5
        if not improved:
            status = "floor"
            break
        path.append(ll)
    return beta, sb2, sy2, ll, status


def fit_lmm_em(data: ClusteredData, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER, info_mode: str = "observed",
               interest: str = "beta", init: ThetaLMM | None = None,
               refine: bool = True, workspace: LmmWorkspace | None = None,
               y: np.ndarray | None = None) -> FitResult:
    """Random intercept model MLE via EM over the latent intercepts.

    The EM phase stops when the relative log-likelihood change drops
    below ``tol`` or its iteration budget runs out.  With ``refine`` on
    (the default) a monotone Fisher-scoring pass then finishes the tail,
    which EM alone crawls through when the intercept variance sits near
    zero; the EM phase is capped accordingly.  If neither phase reaches
    its criterion the result carries ``converged=False`` and a
    ``NonConvergenceWarning``.  ``init`` warm-starts the iteration.
    ``y`` substitutes a response vector that shares the dataset's layout
    (the bootstrap uses this so one workspace serves all replicates).
    """
    _check_identifiable(data)
    ws = workspace if workspace is not None else LmmWorkspace(data)
    if ws.data is not data:
        raise ValidationError("workspace was built for a different dataset")
    X = data.X
    if y is None:
        yy = data.y
    else:
        yy = np.asarray(y, dtype=float)
        if yy.shape != data.y.shape:
            raise ValidationError("replacement response has the wrong length")
    Xty = X.T @ yy
    m = ws.sizes
    n_clusters = data.n_clusters
    n_obs = data.n_obs
    yscale = max(float(yy @ yy) / n_obs, 1e-300)

    if init is not None:
        if init.p != data.p:
            raise ValidationError("init has the wrong number of coefficients")
        beta = init.beta.copy()
        sb2 = max(float(init.sigma_b2), 0.0)
        sy2 = max(float(init.sigma_y2), 1e-12 * yscale)
    else:
        beta = spd_solve(ws.cho_XtX, Xty)
        sb2, sy2 = _initial_variances(ws, yy - X @ beta)

    ll = ws.loglik(beta, sb2, sy2, y=yy)
    path = [ll]
    converged = False
    stop_reason = "max_iter"
    it = 0
    # With the scoring finisher on, EM only needs to reach its basin;
    # without it, EM runs the full budget (boundary optima crawl).
    em_cap = min(max_iter, _EM_HANDOFF) if refine else max_iter
    for it in range(1, em_cap + 1):
        # E-step: posterior moments of the cluster intercepts
        r = yy - X @ beta
        s = ws.cluster_sums(r)
        lam1 = sy2 + m * sb2
        v = sb2 * sy2 / lam1
        mu = sb2 * s / lam1
        # M-step: coefficients from intercept-adjusted least squares,
        # then the variances from the posterior moments
        beta = spd_solve(ws.cho_XtX, Xty - ws.C.T @ mu)
        r = yy - X @ beta
        s = ws.cluster_sums(r)
        q = ws.cluster_sums(r * r)
        sb2 = float((mu * mu + v).sum()) / n_clusters
        sy2 = float((q - 2.0 * mu * s + m * mu * mu + m * v).sum()) / n_obs
        if sy2 <= 1e-12 * yscale:
            raise DegenerateVariance(
                f"residual variance collapsed to {sy2:.3e} during EM"
            )
        ll_new = ws.loglik(beta, sb2, sy2, y=yy)
        if ll_new < ll - _MONOTONE_SLACK * max(1.0, abs(ll)):
            raise NumericalError(
                f"log-likelihood decreased at EM iteration {it}: "
                f"{ll:.12g} -> {ll_new:.12g}"
            )
        path.append(ll_new)
        delta = abs(ll_new - ll)
        ll = ll_new
        if delta <= tol * max(1.0, abs(ll)):
            converged = True
            stop_reason = "tol"
            break

    if refine:
        beta, sb2, sy2, ll, status = _scoring_refinement(
            ws, beta, sb2, sy2, ll, path, yy, yscale
        )
        if status not in ("score", "floor"):
            rescue = _profile_ratio_rescue(ws, yy, sb2 / max(sy2, 1e-300))
            if rescue is not None and rescue[3] >= ll - _MONOTONE_SLACK * max(
                1.0, abs(ll)
            ):
                beta, sb2, sy2, ll_r = rescue
                if not path or ll_r >= path[-1]:
                    path.append(ll_r)
                ll = max(ll, ll_r)
                score = ws.score_and_expected_info(beta, sb2, sy2, y=yy)[0]
                norm = _masked_score_norm(score, X.shape[1], sb2, sy2, yscale)
                if norm <= 1e-10 * max(1.0, float(n_obs)):
                    status = "score"
        if not converged and status in ("score", "floor"):
            converged = True
            stop_reason = "scoring"
    if not converged:
        warnings.warn(
            f"EM stopped at max_iter={max_iter} with relative change above tol={tol:g}",
            NonConvergenceWarning,
        )

    theta = ThetaLMM(beta, sb2, sy2)
    if y is None:
        g = information_matrices(data, theta, mode=info_mode, interest="full").f_n
    elif info_mode == "expected":
        g = ws.score_and_expected_info(theta.beta, sb2, sy2, y=yy)[1]
        g = 0.5 * (g + g.T)
    else:
        swap = ClusteredData(data.cluster_ids, yy, data.X, data.sizes)
        g = information_matrices(swap, theta, mode=info_mode, interest="full").f_n
    try:
        sigma_star = inv_spd(g, SingularCovariance, "information matrix")
    except SingularCovariance as err:
        if info_mode == "observed" and sb2 <= 0.0:
            raise SingularCovariance(
                "observed information is not positive definite at the fitted "
                "optimum (cluster variance at the zero boundary); refit with "
                "info_mode='expected'"
            ) from err
        raise
    return FitResult(
        model="lmm",
        theta_hat=theta,
        g_n_theta=g,
        sigma_star=sigma_star,
        loglik=float(ll),
        interest_selector=_interest_selector(interest, theta.q, theta.p),
        info_mode=info_mode,
        converged=converged,
        n_iter=it,
        stop_reason=stop_reason,
        loglik_path=tuple(path),
    )
