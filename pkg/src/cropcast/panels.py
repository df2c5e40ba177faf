"""Core data containers for yield and climate-index panels.

Panels are immutable after construction: the underlying numpy arrays are
marked read-only so fitted objects can share them across threads without
copies.  Structural consistency (matching array shapes) is enforced at
construction time; soft data-quality rules (missing cells, coordinate
bounds, year gaps) are collected by :func:`validate_panels` so that a caller
sees *all* problems at once instead of the first one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "RegionMeta",
    "YieldPanel",
    "CovariatePanel",
    "BstsConfig",
    "OptimizerSettings",
    "FitScenario",
    "Violation",
    "build_cross_max",
    "validate_panels",
]


@dataclass(frozen=True)
class RegionMeta:
    """Identifier plus geographic position of one region."""

    region_id: str
    name: str
    latitude: float
    longitude: float


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class YieldPanel:
    """Annual yields for ``D`` regions over ``T`` consecutive years.

    Parameters
    ----------
    regions : sequence of RegionMeta
    years : array of int, shape (T,)
    values : array, shape (D, T)
        ``values[d, t]`` is the yield of region ``d`` in ``years[t]``.
    """

    regions: tuple
    years: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        years = np.array(self.years, dtype=int, copy=True)
        years.flags.writeable = False
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "values", _freeze(self.values))
        if self.values.ndim != 2:
            raise ShapeError(
                f"yield values must have 2 axes (region, year), got {self.values.ndim}"
            )
        if self.values.shape[0] != len(self.regions):
            raise ShapeError(
                f"region axis has length {self.values.shape[0]} but "
                f"{len(self.regions)} regions were given",
                axis=0,
            )
        if self.values.shape[1] != self.years.shape[0]:
            raise ShapeError(
                f"year axis has length {self.values.shape[1]} but "
                f"{self.years.shape[0]} years were given",
                axis=1,
            )

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]

    @property
    def n_years(self) -> int:
        return self.values.shape[1]

    @property
    def region_ids(self) -> tuple:
        return tuple(r.region_id for r in self.regions)


@dataclass(frozen=True)
class CovariatePanel:
    """Extreme-climate index panel aligned with a :class:`YieldPanel`.

    ``values[d, m, t]`` is index ``index_names[m]`` observed in region ``d``
    in year ``t``.  ``cross_max[m, t] = max_d values[d, m, t]`` is the
    cross-region pooled series that drives the copula parameter; it is
    computed on construction when not supplied.
    """

    index_names: tuple
    years: np.ndarray
    values: np.ndarray
    cross_max: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "index_names", tuple(self.index_names))
        years = np.array(self.years, dtype=int, copy=True)
        years.flags.writeable = False
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "values", _freeze(self.values))
        if self.values.ndim != 3:
            raise ShapeError(
                "covariate values must have 3 axes (region, index, year), "
                f"got {self.values.ndim}"
            )
        if self.values.shape[1] != len(self.index_names):
            raise ShapeError(
                f"index axis has length {self.values.shape[1]} but "
                f"{len(self.index_names)} index names were given",
                axis=1,
            )
        if self.values.shape[2] != self.years.shape[0]:
            raise ShapeError(
                f"year axis has length {self.values.shape[2]} but "
                f"{self.years.shape[0]} years were given",
                axis=2,
            )
        if self.cross_max is None:
            object.__setattr__(self, "cross_max", _freeze(build_cross_max(self.values)))
        else:
            cm = _freeze(self.cross_max)
            if cm.shape != self.values.shape[1:]:
                raise ShapeError(
                    f"cross_max shape {cm.shape} does not match (index, year) "
                    f"shape {self.values.shape[1:]}"
                )
            object.__setattr__(self, "cross_max", cm)

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]

    @property
    def n_indices(self) -> int:
        return self.values.shape[1]

    def restrict(self, region_idx: Sequence[int]) -> "CovariatePanel":
        """Sub-panel over the given region positions; cross_max is recomputed."""
        idx = list(region_idx)
        return CovariatePanel(
            index_names=self.index_names,
            years=self.years,
            values=self.values[idx],
        )


def build_cross_max(values: np.ndarray) -> np.ndarray:
    """Pool a (region, index, year) array into its cross-region maxima.

    Returns an (index, year) array with ``out[m, t] = max_d values[d, m, t]``.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 3:
        raise ShapeError(
            f"expected 3 axes (region, index, year), got {values.ndim}",
            axis=None,
        )
    if values.shape[0] == 0:
        raise ShapeError("region axis is empty", axis=0)
    return values.max(axis=0)


@dataclass(frozen=True)
class BstsConfig:
    """Sampler settings for the structural time-series marginal model."""

    ar_order: int = 1
    n_iter: int = 10_000
    burn_in: int = 2_000
    seasonal_period: int = 1
    ig_shape: float = 0.01
    ig_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.ar_order < 1:
            raise ValueError(f"ar_order must be >= 1, got {self.ar_order}")
        if self.seasonal_period < 1:
            raise ValueError(
                f"seasonal_period must be >= 1, got {self.seasonal_period}"
            )
        if self.n_iter <= self.burn_in:
            raise ValueError(
                f"n_iter ({self.n_iter}) must exceed burn_in ({self.burn_in})"
            )
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.ig_shape <= 0 or self.ig_rate <= 0:
            raise ValueError("inverse-gamma hyperparameters must be positive")


@dataclass(frozen=True)
class OptimizerSettings:
    """Budget and tolerance for likelihood optimizations."""

    max_evals: int = 4000
    tol: float = 1e-8
    restarts: int = 3

    def __post_init__(self):
        if self.max_evals < 1:
            raise ValueError("max_evals must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")


@dataclass
class FitScenario:
    """Everything needed for one end-to-end fit-and-forecast run."""

    yields: YieldPanel
    covariates: CovariatePanel
    family: str = "gumbel"
    bsts: BstsConfig = field(default_factory=BstsConfig)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    horizon: int = 10
    n_paths: int = 1000
    seed: int = 0
    n_clusters: int = 2
    medoids: Optional[tuple] = None  # region_ids; overrides clustering when given

    def validate(self):
        """Run panel validation plus scenario-level cross checks."""
        violations = validate_panels(self.yields, self.covariates, self.yields.regions)
        if self.yields.n_years and self.covariates.years.shape[0]:
            if not np.array_equal(self.yields.years, self.covariates.years):
                violations.append(
                    Violation(
                        code="year-mismatch",
                        message="yield and covariate panels cover different years",
                    )
                )
        if self.yields.n_regions != self.covariates.n_regions:
            violations.append(
                Violation(
                    code="region-count",
                    message=(
                        f"yield panel has {self.yields.n_regions} regions but "
                        f"covariate panel has {self.covariates.n_regions}"
                    ),
                )
            )
        if self.horizon < 1:
            violations.append(
                Violation(code="horizon", message="forecast horizon must be >= 1")
            )
        if self.n_paths < 1:
            violations.append(
                Violation(code="paths", message="number of sample paths must be >= 1")
            )
        if self.medoids is not None:
            known = set(self.yields.region_ids)
            for rid in self.medoids:
                if rid not in known:
                    violations.append(
                        Violation(
                            code="medoid-unknown",
                            message=f"medoid region '{rid}' is not in the yield panel",
                            region_id=rid,
                        )
                    )
        return violations


@dataclass(frozen=True)
class Violation:
    """One data-quality problem found during validation."""

    code: str
    message: str
    region_id: Optional[str] = None
    year: Optional[int] = None
    index_name: Optional[str] = None


def _check_years(years: np.ndarray, label: str, out: list):
    if years.shape[0] == 0:
        out.append(Violation(code="empty-years", message=f"{label}: no years"))
        return
    diffs = np.diff(years)
    for i, d in enumerate(diffs):
        if d != 1:
            out.append(
                Violation(
                    code="year-gap",
                    message=(
                        f"{label}: years must be consecutive; gap of {d} after "
                        f"{int(years[i])}"
                    ),
                    year=int(years[i]),
                )
            )


def validate_panels(
    yields: YieldPanel,
    covariates: Optional[CovariatePanel],
    regions: Optional[Sequence[RegionMeta]] = None,
) -> list:
    """Collect all data-quality violations across the input panels.

    Returns a list of :class:`Violation`; an empty list means the inputs are
    usable.  Structural shape mismatches are caught earlier, at panel
    construction.
    """
    out: list = []
    regions = tuple(regions) if regions is not None else yields.regions

    seen = set()
    for r in regions:
        if r.region_id in seen:
            out.append(
                Violation(
                    code="duplicate-region",
                    message=f"region id '{r.region_id}' appears more than once",
                    region_id=r.region_id,
                )
            )
        seen.add(r.region_id)
        if not (-90.0 <= r.latitude <= 90.0):
            out.append(
                Violation(
                    code="latitude",
                    message=(
                        f"region '{r.region_id}' has latitude {r.latitude}, "
                        "outside [-90, 90]"
                    ),
                    region_id=r.region_id,
                )
            )
        if not (-180.0 <= r.longitude <= 180.0):
            out.append(
                Violation(
                    code="longitude",
                    message=(
                        f"region '{r.region_id}' has longitude {r.longitude}, "
                        "outside [-180, 180]"
                    ),
                    region_id=r.region_id,
                )
            )

    _check_years(yields.years, "yield panel", out)
    if yields.n_years < 5:
        out.append(
            Violation(
                code="too-short",
                message=f"yield panel has {yields.n_years} years; at least 5 required",
            )
        )
    bad = ~np.isfinite(yields.values)
    if bad.any():
        for d, t in zip(*np.nonzero(bad)):
            rid = regions[d].region_id if d < len(regions) else str(d)
            out.append(
                Violation(
                    code="missing-yield",
                    message=(
                        f"yield for region '{rid}' in {int(yields.years[t])} "
                        "is missing or non-finite"
                    ),
                    region_id=rid,
                    year=int(yields.years[t]),
                )
            )

    if covariates is not None:
        _check_years(covariates.years, "covariate panel", out)
        bad = ~np.isfinite(covariates.values)
        if bad.any():
            for d, m, t in zip(*np.nonzero(bad)):
                rid = regions[d].region_id if d < len(regions) else str(d)
                out.append(
                    Violation(
                        code="missing-covariate",
                        message=(
                            f"covariate '{covariates.index_names[m]}' for region "
                            f"'{rid}' in {int(covariates.years[t])} is missing "
                            "or non-finite"
                        ),
                        region_id=rid,
                        year=int(covariates.years[t]),
                        index_name=covariates.index_names[m],
                    )
                )
        else:
            expected = build_cross_max(covariates.values)
            if not np.array_equal(expected, covariates.cross_max):
                out.append(
                    Violation(
                        code="cross-max",
                        message=(
                            "stored cross-region maxima disagree with the "
                            "per-region covariate values"
                        ),
                    )
                )

    return out
