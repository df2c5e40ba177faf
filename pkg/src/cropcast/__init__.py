"""Forecasting of spatially dependent annual crop yields.

The package combines four statistical components:

* structural time-series marginals per region, fitted by Gibbs sampling
  (:mod:`cropcast.bsts` on top of :mod:`cropcast.kalman`),
* a bivariate copula whose dependence parameter evolves with pooled
  extreme-climate indices (:mod:`cropcast.copulas`),
* dynamic generalized-extreme-value models for those indices
  (:mod:`cropcast.gev`), and
* medoid clustering of regions by blended spatial and dependence
  dissimilarity (:mod:`cropcast.clustering`).

:mod:`cropcast.forecast` wires them into an end-to-end fit-and-simulate
pipeline, :mod:`cropcast.metrics` scores forecasts, and :mod:`cropcast.io`
/ :mod:`cropcast.cli` provide file formats and the ``cropcast`` command.
"""

from .errors import (
    ArtifactError,
    ConfigError,
    CropcastError,
    DomainError,
    FilterError,
    FitError,
    NumericError,
    ShapeError,
    SupportError,
    ValidationError,
)
from .forecast import (
    FittedPipeline,
    ForecastDistribution,
    SyntheticTruth,
    fit_pipeline,
    forecast,
    generate_synthetic,
    marginal_forecast,
)
from .panels import (
    BstsConfig,
    CovariatePanel,
    FitScenario,
    OptimizerSettings,
    RegionMeta,
    YieldPanel,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ArtifactError",
    "ConfigError",
    "CropcastError",
    "DomainError",
    "FilterError",
    "FitError",
    "NumericError",
    "ShapeError",
    "SupportError",
    "ValidationError",
    "FittedPipeline",
    "ForecastDistribution",
    "SyntheticTruth",
    "fit_pipeline",
    "forecast",
    "generate_synthetic",
    "marginal_forecast",
    "BstsConfig",
    "CovariatePanel",
    "FitScenario",
    "OptimizerSettings",
    "RegionMeta",
    "YieldPanel",
]
