"""Shared fixtures: small hand-checkable datasets and random instances."""
from __future__ import annotations

import numpy as np
import pytest

from cookscale import (
    ClusteredData,
    CrossSectionData,
    ScenarioConfig,
    fit_lmm_em,
    fit_ols,
    gen_scenario,
)


@pytest.fixture(scope="session")
def three_point() -> CrossSectionData:
    """Intercept-only data with a hand-solvable fit: mean 1, variance 2."""
    return CrossSectionData(np.array([0.0, 0.0, 3.0]), np.ones((3, 1)))


@pytest.fixture(scope="session")
def three_point_fit(three_point):
    return fit_ols(three_point)


def make_lm_instance(seed: int, n: int = 30, p: int = 4) -> CrossSectionData:
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    beta = rng.normal(size=p)
    y = X @ beta + rng.normal(size=n)
    return CrossSectionData(y, X)


@pytest.fixture(scope="session")
def lm_instance() -> CrossSectionData:
    return make_lm_instance(0)


@pytest.fixture(scope="session")
def lm_fit(lm_instance):
    return fit_ols(lm_instance)


def make_balanced_lmm(n_clusters: int = 6, m: int = 4, seed: int = 1,
                      p: int = 1) -> ClusteredData:
    """Every cluster the same size; p=1 gives the intercept-only design."""
    rng = np.random.default_rng(seed)
    triples = []
    for i in range(n_clusters):
        if p == 1:
            Xi = np.ones((m, 1))
        else:
            Xi = np.column_stack([np.ones(m), rng.normal(size=(m, p - 1))])
        yi = Xi.sum(axis=1) + rng.normal() + 0.5 * rng.normal(size=m)
        triples.append((i, Xi, yi))
    return ClusteredData.from_clusters(triples)


@pytest.fixture(scope="session")
def scenario_data() -> ClusteredData:
    """One dataset from the clustered simulation scenario."""
    return gen_scenario(ScenarioConfig(n=12, scenario="clean", n_datasets=1,
                                       seed=34))[0]


@pytest.fixture(scope="session")
def scenario_fit(scenario_data):
    return fit_lmm_em(scenario_data, info_mode="expected", interest="beta")
