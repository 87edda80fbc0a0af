"""Parameter vectors and fitted-model results.

Parameter layout is fixed once per family and used consistently by the
information, deletion, and approximation code:

* linear model: ``(beta_1, ..., beta_p, sigma2)``, q = p + 1
* random intercept model: ``(beta_1, ..., beta_p, sigma_b2, sigma_y2)``,
  q = p + 2

Variance components are parameterized as variances, not standard
deviations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ._linalg import inv_spd
from .exceptions import DimensionMismatch, SingularCovariance


def _vec(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ThetaLM:
    """Linear model parameters (beta, sigma2)."""

    beta: np.ndarray
    sigma2: float

    def __post_init__(self):
        object.__setattr__(self, "beta", _vec(self.beta))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def q(self) -> int:
        return self.p + 1

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.sigma2]])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "ThetaLM":
        v = np.asarray(v, dtype=float)
        return cls(v[:-1], v[-1])


@dataclass(frozen=True)
class ThetaLMM:
    """Random intercept model parameters (beta, sigma_b2, sigma_y2)."""

    beta: np.ndarray
    sigma_b2: float
    sigma_y2: float

    def __post_init__(self):
        object.__setattr__(self, "beta", _vec(self.beta))
        object.__setattr__(self, "sigma_b2", float(self.sigma_b2))
        object.__setattr__(self, "sigma_y2", float(self.sigma_y2))

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def q(self) -> int:
        return self.p + 2

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.sigma_b2, self.sigma_y2]])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "ThetaLMM":
        v = np.asarray(v, dtype=float)
        return cls(v[:-2], v[-2], v[-1])


Theta = Union[ThetaLM, ThetaLMM]


def beta_selector(q: int, p: int) -> np.ndarray:
    """Selection matrix picking the regression block out of the full vector."""
    L = np.zeros((q, p))
    L[:p, :p] = np.eye(p)
    L.setflags(write=False)
    return L


@dataclass(frozen=True)
class FitResult:
    """A fitted model with the curvature pieces the diagnostics need.

    ``g_n_theta`` is the q x q information matrix at the estimate (observed
    by default, expected on request) and is never re-estimated after a
    deletion.  ``sigma_star`` is its inverse, used as the default sampling
    covariance for the perturbation prior.  ``interest_selector`` restricts
    quadratic forms to a parameter block (the regression coefficients, by
    default); ``None`` means the full vector.
    """

    model: str
    theta_hat: Theta
    g_n_theta: np.ndarray
    sigma_star: np.ndarray
    loglik: float
    interest_selector: np.ndarray | None = None
    info_mode: str = "observed"
    converged: bool = True
    n_iter: int = 0
    stop_reason: str = "closed_form"
    loglik_path: tuple = ()

    def __post_init__(self):
        G = np.array(self.g_n_theta, dtype=float)
        q = self.theta_hat.q
        if G.shape != (q, q):
            raise DimensionMismatch(f"g_n_theta must be {q}x{q}, got {G.shape}")
        G = 0.5 * (G + G.T)
        w = np.linalg.eigvalsh(G)
        if w[0] <= 1e-10 * max(w[-1], 0.0):
            raise SingularCovariance(
                f"information matrix is not positive definite (eigenvalues {w[0]:.3e}..{w[-1]:.3e})"
            )
        G.setflags(write=False)
        object.__setattr__(self, "g_n_theta", G)
        S = np.array(self.sigma_star, dtype=float)
        if S.shape != (q, q):
            raise DimensionMismatch(f"sigma_star must be {q}x{q}, got {S.shape}")
        S = 0.5 * (S + S.T)
        S.setflags(write=False)
        object.__setattr__(self, "sigma_star", S)
        if self.interest_selector is not None:
            L = np.array(self.interest_selector, dtype=float)
            if L.ndim != 2 or L.shape[0] != q:
                raise DimensionMismatch(f"interest selector must have {q} rows")
            L.setflags(write=False)
            object.__setattr__(self, "interest_selector", L)

    @property
    def q(self) -> int:
        return self.theta_hat.q

    @property
    def p(self) -> int:
        return self.theta_hat.p

    def interest_weight(self) -> np.ndarray:
        """Weight matrix for the interest block: (L' G^{-1} L)^{-1}.

        Falls back to the full information matrix when no selector is set.
        """
        if self.interest_selector is None:
            return self.g_n_theta
        L = self.interest_selector
        middle = L.T @ (self.sigma_star @ L)
        return inv_spd(middle, SingularCovariance, "interest block of sigma_star")

    def interest_delta(self, theta_other: Theta) -> np.ndarray:
        """Parameter difference restricted to the interest block."""
        if type(theta_other) is not type(self.theta_hat):
            raise DimensionMismatch(
                f"parameter family mismatch: {type(theta_other).__name__} vs "
                f"{type(self.theta_hat).__name__}"
            )
        if theta_other.q != self.q:
            raise DimensionMismatch("parameter dimension mismatch")
        d = theta_other.as_vector() - self.theta_hat.as_vector()
        if self.interest_selector is None:
            return d
        return self.interest_selector.T @ d

    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma_star))

    def theta_dict(self) -> dict:
        t = self.theta_hat
        if isinstance(t, ThetaLM):
            return {"beta": t.beta.tolist(), "sigma2": t.sigma2}
        return {"beta": t.beta.tolist(), "sigma_b2": t.sigma_b2, "sigma_y2": t.sigma_y2}

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "theta_hat": self.theta_dict(),
            "g_n_theta": self.g_n_theta.tolist(),
            "sigma_star": self.sigma_star.tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "meta": {
                "info_mode": self.info_mode,
                "n_iter": self.n_iter,
                "stop_reason": self.stop_reason,
            },
        }
