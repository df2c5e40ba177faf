"""Shared fixtures: fast sampler/optimizer settings and one small fitted
pipeline reused across the forecast-facing test modules.

The small pipeline uses two regions with ``n_clusters=2`` so the clustering
stage is the identity (every region is its own medoid) and no pairwise
copula fits are needed; that keeps the session fixture under a few seconds
while still exercising the full joint model.
"""

import numpy as np
import pytest

from cropcast.forecast import SyntheticTruth, fit_pipeline, generate_synthetic
from cropcast.panels import BstsConfig, FitScenario, OptimizerSettings


@pytest.fixture(scope="session")
def fast_bsts():
    return BstsConfig(n_iter=800, burn_in=200)


@pytest.fixture(scope="session")
def fast_optimizer():
    return OptimizerSettings(max_evals=1500, restarts=1)


@pytest.fixture(scope="session")
def small_truth():
    return SyntheticTruth(n_years=60, family="clayton")


@pytest.fixture(scope="session")
def small_panels(small_truth):
    return generate_synthetic(small_truth, rng=np.random.default_rng(42))


@pytest.fixture(scope="session")
def small_scenario(small_panels, fast_bsts, fast_optimizer):
    yields, covariates, _ = small_panels
    return FitScenario(
        yields=yields,
        covariates=covariates,
        family="clayton",
        bsts=fast_bsts,
        optimizer=fast_optimizer,
        horizon=5,
        n_paths=200,
        seed=7,
        n_clusters=2,
    )


@pytest.fixture(scope="session")
def small_pipeline(small_scenario):
    return fit_pipeline(small_scenario)
