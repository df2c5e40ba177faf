"""Forecast-accuracy metrics and covariate-screening diagnostics.

Pooled and per-region errors compare simulated forecast paths against
held-out actual yields; the screening diagnostics summarize how climate
indices co-move in the bulk (Pearson correlation) and in the tails
(empirical tail-dependence coefficients on rank-transformed series).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.stats import rankdata

from .forecast import ForecastDistribution
from .panels import CovariatePanel

__all__ = [
    "MetricReport",
    "amse_pooled",
    "per_region_metrics",
    "screen_covariates",
]


@dataclass(frozen=True)
class MetricReport:
    """Error metrics for one fitted model on a validation window."""

    label: str
    amse: float
    region_ids: Tuple[str, ...]
    amse_by_region: np.ndarray
    amae_by_region: np.ndarray
    n_paths: int
    horizon: int

    def __post_init__(self):
        for name in ("amse_by_region", "amae_by_region"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.amse < 0 or np.any(self.amse_by_region < 0):
            raise ValueError("error metrics cannot be negative")
        if np.any(self.amae_by_region > np.sqrt(self.amse_by_region) + 1e-12):
            raise ValueError("mean absolute error exceeds root mean squared error")

    def rows(self):
        """Flat (model, region, metric, value) rows for tabular output."""
        out = [(self.label, "pooled", "amse", float(self.amse))]
        for i, rid in enumerate(self.region_ids):
            out.append((self.label, rid, "amse", float(self.amse_by_region[i])))
            out.append((self.label, rid, "amae", float(self.amae_by_region[i])))
        return out


def _aligned_errors(forecasts: ForecastDistribution, actual_values, actual_years):
    """Forecast-minus-actual array of shape (D, T, n_paths)."""
    actual_values = np.asarray(actual_values, dtype=float)
    actual_years = np.asarray(actual_years)
    if actual_values.ndim != 2:
        raise ValueError(f"actuals must be (D, T), got shape {actual_values.shape}")
    if actual_values.shape[0] != len(forecasts.region_ids):
        raise ValueError(
            f"forecast covers {len(forecasts.region_ids)} regions but actuals "
            f"have {actual_values.shape[0]}"
        )
    if actual_values.shape[1] != forecasts.years.shape[0] or not np.array_equal(
        actual_years, forecasts.years
    ):
        raise ValueError(
            f"forecast years {forecasts.years.tolist()} do not align with "
            f"actual years {actual_years.tolist()}"
        )
    return forecasts.paths - actual_values[:, :, None]


def amse_pooled(
    forecasts: ForecastDistribution, actual_values, actual_years
) -> float:
    """Mean squared error pooled over both regions and all path-years.

    Averages (forecast - actual)^2 over every path-year pair and both
    regions, with the 1/(2n) normalization of the two-region comparison
    table.
    """
    err = _aligned_errors(forecasts, actual_values, actual_years)
    if err.shape[0] != 2:
        raise ValueError(
            f"pooled AMSE is defined for exactly 2 regions, got {err.shape[0]}"
        )
    return float(np.mean(err**2))


def per_region_metrics(
    forecasts: ForecastDistribution, actual_values, actual_years
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-region AMSE and AMAE over paths (outer mean) and years (inner).

    Returns ``(amse_d, amae_d)``, each of length D.
    """
    err = _aligned_errors(forecasts, actual_values, actual_years)
    amse_d = (err**2).mean(axis=(1, 2))
    amae_d = np.abs(err).mean(axis=(1, 2))
    return amse_d, amae_d


def build_report(
    label: str,
    forecasts: ForecastDistribution,
    actual_values,
    actual_years,
) -> MetricReport:
    """Bundle pooled and per-region errors into one report."""
    amse_d, amae_d = per_region_metrics(forecasts, actual_values, actual_years)
    err = _aligned_errors(forecasts, actual_values, actual_years)
    pooled = float(np.mean(err**2)) if err.shape[0] == 2 else float(amse_d.mean())
    return MetricReport(
        label=label,
        amse=pooled,
        region_ids=forecasts.region_ids,
        amse_by_region=amse_d,
        amae_by_region=amae_d,
        n_paths=forecasts.n_paths,
        horizon=int(forecasts.years.shape[0]),
    )


def screen_covariates(
    covariates: CovariatePanel,
    upper_q: float = 0.99,
    lower_q: float = 0.01,
) -> Dict[str, np.ndarray]:
    """Correlation and tail-dependence diagnostics across climate indices.

    Observations are pooled over regions and years; each index column is
    rank-transformed before the tail counts.  ``lambda_upper[i, j]``
    estimates P(U > q, V > q)/(1 - q) at ``q = upper_q`` and
    ``lambda_lower`` the analogous lower-corner coefficient.  Pairs with a
    constant column get NaN correlation.
    """
    if not 0.5 < upper_q < 1.0 or not 0.0 < lower_q < 0.5:
        raise ValueError("thresholds must satisfy 0 < lower_q < 0.5 < upper_q < 1")
    vals = covariates.values
    M = vals.shape[1]
    if vals.shape[2] < 30:
        warnings.warn(
            f"only {vals.shape[2]} years of covariates; screening is unstable"
        )
    pooled = vals.transpose(1, 0, 2).reshape(M, -1)
    n = pooled.shape[1]

    ranks = np.empty_like(pooled)
    constant = np.zeros(M, dtype=bool)
    for m in range(M):
        if np.ptp(pooled[m]) == 0.0:
            constant[m] = True
        ranks[m] = rankdata(pooled[m]) / (n + 1.0)

    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.atleast_2d(np.corrcoef(pooled))
    for m in np.flatnonzero(constant):
        corr[m, :] = np.nan
        corr[:, m] = np.nan

    upper = ranks > upper_q
    lower = ranks < lower_q
    lam_u = (upper[:, None, :] & upper[None, :, :]).mean(axis=2) / (1.0 - upper_q)
    lam_l = (lower[:, None, :] & lower[None, :, :]).mean(axis=2) / lower_q
    return {
        "index_names": np.array(covariates.index_names),
        "correlation": corr,
        "lambda_upper": lam_u,
        "lambda_lower": lam_l,
    }
