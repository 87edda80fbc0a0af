"""Clustered-data simulation scenarios for the experiment drivers.

Each cluster i contributes rows x_ij = (1, u_i, log j) with a scalar
cluster covariate u_i ~ N(0,1) and sizes drawn uniformly from a small
range.  The covariate side is drawn exactly once per root seed; dataset
replications redraw only the responses.  Scenario variants either leave
the draw alone (clean), pin chosen clusters to fixed sizes and fixed
random-effect values (injected), or pin the last cluster's size while
sweeping its effect over a grid (sweep).

Stream layout under the root seed: (11,) covariates and sizes, (13, d)
responses of dataset d, (17, d) the swept cluster's own noise, kept
separate so it is shared across grid points of the sweep.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ClusteredData
from .exceptions import ValidationError

_STREAM_COVARIATES = 11
_STREAM_RESPONSES = 13
_STREAM_SWEPT_NOISE = 17

_SCENARIOS = ("clean", "injected", "sweep")


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 12
    beta: tuple = (1.0, 1.0, 1.0)
    sigma_b: float = 1.0
    sigma_y: float = 1.0
    cluster_size_range: tuple = (1, 5)
    scenario: str = "clean"
    # (cluster position, new size, fixed random-effect value)
    injection: tuple = ()
    # (size of the last cluster, fixed effect value of the last cluster)
    sweep: tuple | None = None
    n_datasets: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError("need at least two clusters")
        if self.scenario not in _SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        lo, hi = self.cluster_size_range
        if lo < 1 or hi < lo:
            raise ValidationError("cluster sizes must be at least 1")
        if len(self.beta) != 3:
            raise ValidationError("the scenario design has three covariates")
        if self.sigma_b < 0 or self.sigma_y <= 0:
            raise ValidationError("need sigma_b >= 0 and sigma_y > 0")
        if self.n_datasets < 1:
            raise ValidationError("need at least one dataset")
        if self.scenario == "sweep":
            if self.sweep is None:
                raise ValidationError("sweep scenario needs a (size, effect) pair")
            m_n, _ = self.sweep
            if int(m_n) < 1:
                raise ValidationError("swept cluster size must be at least 1")
        for item in self.injection:
            idx, m, _ = item
            if not (0 <= int(idx) < self.n) or int(m) < 1:
                raise ValidationError(f"bad injection entry {item!r}")


def _default_injection(n: int) -> tuple:
    # First cluster: small and strongly shifted. Last cluster: large and
    # moderately shifted.
    return ((0, 1, 4.0), (n - 1, 5, 3.0))


def _covariate_draw(config: ScenarioConfig):
    ss = np.random.SeedSequence(config.seed, spawn_key=(_STREAM_COVARIATES,))
    rng = np.random.default_rng(ss)
    lo, hi = config.cluster_size_range
    sizes = rng.integers(lo, hi + 1, size=config.n)
    u = rng.standard_normal(config.n)
    return sizes.astype(int), u


def _apply_structure(config: ScenarioConfig, sizes: np.ndarray):
    """Sizes and fixed-effect overrides implied by the scenario."""
    sizes = sizes.copy()
    fixed_b: dict[int, float] = {}
    if config.scenario == "injected":
        injection = config.injection or _default_injection(config.n)
        for idx, m, b in injection:
            sizes[int(idx)] = int(m)
            fixed_b[int(idx)] = float(b)
    elif config.scenario == "sweep":
        m_n, b_n = config.sweep
        sizes[config.n - 1] = int(m_n)
        fixed_b[config.n - 1] = float(b_n)
    return sizes, fixed_b


def _design_matrix(sizes: np.ndarray, u: np.ndarray) -> np.ndarray:
    blocks = []
    for i, m in enumerate(sizes):
        Xi = np.empty((m, 3))
        Xi[:, 0] = 1.0
        Xi[:, 1] = u[i]
        Xi[:, 2] = np.log(np.arange(1, m + 1))
        blocks.append(Xi)
    return np.concatenate(blocks, axis=0)


def scenario_structure(config: ScenarioConfig):
    """The shared covariate side: (sizes, design matrix, fixed effects)."""
    sizes, u = _covariate_draw(config)
    sizes, fixed_b = _apply_structure(config, sizes)
    return sizes, _design_matrix(sizes, u), fixed_b


def _responses(config: ScenarioConfig, dataset_index: int, sizes, X, fixed_b):
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(_STREAM_RESPONSES, dataset_index))
    )
    n = config.n
    swept = config.scenario == "sweep"
    free = [i for i in range(n) if not (swept and i in fixed_b)]
    b = np.empty(n)
    b[free] = config.sigma_b * rng.standard_normal(len(free))
    n_free_obs = int(sizes[free].sum())
    eps = np.empty(int(sizes.sum()))
    starts = np.concatenate(([0], np.cumsum(sizes)))
    free_rows = np.concatenate([np.arange(starts[i], starts[i + 1]) for i in free]) \
        if free else np.empty(0, dtype=int)
    eps[free_rows] = config.sigma_y * rng.standard_normal(n_free_obs)
    if swept:
        noise_rng = np.random.default_rng(
            np.random.SeedSequence(config.seed,
                                   spawn_key=(_STREAM_SWEPT_NOISE, dataset_index))
        )
        for i in fixed_b:
            rows = np.arange(starts[i], starts[i + 1])
            eps[rows] = config.sigma_y * noise_rng.standard_normal(rows.size)
    for i, val in fixed_b.items():
        b[i] = val
    beta = np.asarray(config.beta, dtype=float)
    return X @ beta + np.repeat(b, sizes) + eps


def gen_scenario(config: ScenarioConfig) -> list[ClusteredData]:
    """Simulated datasets sharing one covariate draw.

    Dataset d's responses depend only on (seed, d) and the scenario's
    fixed effects, so sweep runs that differ only in the swept effect
    value share all of their noise (common random numbers).
    """
    sizes, X, fixed_b = scenario_structure(config)
    ids = tuple(range(1, config.n + 1))
    out = []
    for d in range(config.n_datasets):
        y = _responses(config, d, sizes, X, fixed_b)
        out.append(ClusteredData(ids, y, X, sizes))
    return out
