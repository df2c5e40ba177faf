"""End-to-end model fitting and Monte Carlo yield forecasting.

``fit_pipeline`` chains the stages together: marginal structural-time-series
fits per region, pseudo-observation extraction, medoid clustering, and the
joint copula + extreme-value covariate model on the medoid pair.
``forecast`` then simulates future yields path by path: covariates come from
the fitted dynamic GEV models, the dependence parameter is advanced by its
fitted recursion on the simulated cross-region maxima, residual pairs are
drawn from the copula, and the structural states (level, slope, seasonal,
autoregressive, coefficients) are propagated by their own random-walk
transitions from one retained posterior draw per path.

``generate_synthetic`` runs the same generative recursions forward from
known parameters, producing panels plus a truth record for
simulate-then-fit checks, and ``simulate_future_truth`` continues a truth
record past its last year for coverage checks against forecast bands.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtr, ndtri

from . import clustering as clus
from .bsts import (
    BstsPosterior,
    extract_pseudo_observations,
    fit_bsts,
    rank_uniformize,
)
from .copulas import FullModelFit, fit_full_model, get_family
from .errors import CropcastError, FitError, NumericError, ValidationError
from .gev import GevDynamicFit, fit_dynamic_gev, gev_quantile
from .panels import CovariatePanel, FitScenario, RegionMeta, YieldPanel

__all__ = [
    "FittedPipeline",
    "ForecastDistribution",
    "SyntheticTruth",
    "SyntheticRecord",
    "fit_pipeline",
    "forecast",
    "marginal_forecast",
    "generate_synthetic",
    "simulate_future_truth",
    "DEFAULT_BETA_GRID",
    "path_summaries",
]

DEFAULT_BETA_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 2))

_UCLIP = 1e-12


@contextmanager
def _stage(label: str):
    """Tag errors escaping a pipeline stage with the stage name."""
    try:
        yield
    except CropcastError as err:
        err.args = (f"{label} stage: {err}",)
        raise


@dataclass(frozen=True)
class FittedPipeline:
    """Everything the forecaster needs, fitted on the training window.

    ``posteriors``, ``pseudo_obs``, and ``gev_fits`` cover the medoid
    regions only (in medoid order); ``model`` is None for a single-region
    (marginal-only) pipeline.  ``gev_fits[k][m]`` is the fit for medoid
    region ``k`` and climate index ``m``.
    """

    posteriors: Tuple[BstsPosterior, ...]
    pseudo_obs: np.ndarray
    cluster: Optional[clus.ClusterResult]
    model: Optional[FullModelFit]
    gev_fits: Tuple[Tuple[GevDynamicFit, ...], ...]
    medoid_indices: Tuple[int, ...]
    medoid_ids: Tuple[str, ...]
    scenario: FitScenario

    def __post_init__(self):
        u = np.array(self.pseudo_obs, dtype=float, copy=True)
        u.flags.writeable = False
        object.__setattr__(self, "pseudo_obs", u)

    @property
    def n_medoids(self) -> int:
        return len(self.medoid_indices)

    @property
    def marginal_only(self) -> bool:
        return self.model is None

    @property
    def copula_trivial(self) -> bool:
        return self.model is not None and self.model.evolution.family == "independence"


@dataclass(frozen=True)
class ForecastDistribution:
    """Simulated yield paths and their pointwise summaries.

    ``paths`` has shape (regions, horizon, n_paths); summaries are the
    across-path mean and the 2.5%/97.5% quantiles, computed on sorted path
    values so they do not depend on simulation order.
    """

    region_ids: Tuple[str, ...]
    years: np.ndarray
    paths: np.ndarray
    mean: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    n_discarded: int = 0

    def __post_init__(self):
        for name in ("years", "paths", "mean", "q025", "q975"):
            arr = np.array(getattr(self, name), copy=True)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(self.q025 > self.q975):
            raise ValueError("forecast quantiles are not monotone")

    @property
    def n_paths(self) -> int:
        return self.paths.shape[2]


def path_summaries(paths: np.ndarray):
    """Across-path mean and 2.5%/97.5% quantiles, order-independent."""
    ordered = np.sort(paths, axis=-1)
    return ordered.mean(axis=-1), (
        np.quantile(ordered, 0.025, axis=-1),
        np.quantile(ordered, 0.975, axis=-1),
    )


def _identity_cluster(n_regions: int) -> clus.ClusterResult:
    return clus.ClusterResult(
        n_clusters=n_regions,
        medoids=tuple(range(n_regions)),
        assignment=np.arange(n_regions),
        total_cost=0.0,
        dunn=float("nan"),
        silhouette_mean=float("nan"),
        beta=None,
    )


def _cluster_regions(scenario: FitScenario, posteriors, rng) -> clus.ClusterResult:
    """Pick medoids: pair copula fits, matrix aggregation, beta by Dunn."""
    u_all = rank_uniformize(extract_pseudo_observations(posteriors))
    pair_fits = clus.fit_all_pairs(
        u_all,
        scenario.covariates.cross_max,
        scenario.family,
        settings=scenario.optimizer,
        rng=rng,
    )
    pair_d = clus.pairwise_dissimilarities(pair_fits)
    copula_m = clus.aggregate_to_divisions(pair_d, scenario.yields.n_regions)
    spatial_m = clus.spatial_distance_matrix(scenario.yields.regions)
    if scenario.n_clusters == 1:
        return clus.pam(clus.combine(spatial_m, copula_m, 0.5), 1)
    best = None
    for beta in DEFAULT_BETA_GRID:
        res = clus.pam(clus.combine(spatial_m, copula_m, beta), scenario.n_clusters)
        if best is None or res.dunn > best.dunn:
            best = res
    return best


def fit_pipeline(scenario: FitScenario, posteriors=None) -> FittedPipeline:
    """Fit marginals, cluster regions, and fit the dependence model.

    All randomness derives from ``scenario.seed``.  With ``n_clusters`` equal
    to the number of regions the clustering stage is the identity; with
    explicit ``medoids`` it is skipped entirely.  A single medoid yields a
    marginal-only pipeline (no copula stage); two medoids get the full joint
    model.  More than two medoids are rejected: the dependence stage is
    bivariate.

    ``posteriors`` may supply one pre-fitted marginal per region (in panel
    order) to skip the Gibbs stage, e.g. when refitting the dependence model
    under several copula families on the same data.
    """
    with _stage("validation"):
        violations = scenario.validate()
        if violations:
            raise ValidationError(violations)

    yields = scenario.yields
    cov = scenario.covariates
    D = yields.n_regions

    with _stage("marginals"):
        if scenario.medoids is not None:
            needed = [yields.region_ids.index(rid) for rid in scenario.medoids]
        else:
            needed = list(range(D))
        if posteriors is not None:
            if len(posteriors) != D:
                raise ValueError(
                    f"got {len(posteriors)} pre-fitted marginals for {D} regions"
                )
            fitted = {d: posteriors[d] for d in needed}
        else:
            fitted = {
                d: fit_bsts(
                    yields.values[d],
                    cov.values[d],
                    scenario.bsts,
                    seed=scenario.seed + d,
                )
                for d in needed
            }

    with _stage("clustering"):
        if scenario.medoids is not None:
            cluster = None
            medoid_idx = tuple(needed)
        elif scenario.n_clusters == D:
            cluster = _identity_cluster(D)
            medoid_idx = cluster.medoids
        else:
            cluster = _cluster_regions(
                scenario,
                [fitted[d] for d in range(D)],
                np.random.default_rng(scenario.seed + 1_000_003),
            )
            medoid_idx = cluster.medoids

    posteriors = tuple(fitted[d] for d in medoid_idx)
    pseudo_obs = rank_uniformize(extract_pseudo_observations(posteriors))
    K = len(medoid_idx)

    with _stage("dependence"):
        M = cov.n_indices
        if K == 1:
            model = None
            gev_fits = (
                tuple(
                    _fit_gev_tolerant(cov.values[medoid_idx[0], m], scenario)
                    for m in range(M)
                ),
            )
        elif K == 2:
            cov_pair = CovariatePanel(
                index_names=cov.index_names,
                years=cov.years,
                values=cov.values[list(medoid_idx)],
            )
            model = fit_full_model(
                pseudo_obs,
                cov_pair,
                scenario.family,
                settings=scenario.optimizer,
                rng=np.random.default_rng(scenario.seed + 2_000_003),
            )
            gev_fits = tuple(
                tuple(model.gev_fits[k * M + m] for m in range(M)) for k in range(2)
            )
        else:
            raise ValueError(
                "the dependence stage is bivariate: use n_clusters of 1 or 2 "
                f"(got {K} medoids)"
            )

    return FittedPipeline(
        posteriors=posteriors,
        pseudo_obs=pseudo_obs,
        cluster=cluster,
        model=model,
        gev_fits=gev_fits,
        medoid_indices=tuple(int(i) for i in medoid_idx),
        medoid_ids=tuple(yields.region_ids[i] for i in medoid_idx),
        scenario=scenario,
    )


def _fit_gev_tolerant(z, scenario):
    try:
        return fit_dynamic_gev(
            z, settings=scenario.optimizer, rng=np.random.default_rng(scenario.seed + 3)
        )
    except FitError as err:
        if err.best is not None:
            return err.best
        raise


class _RegionState:
    """Mutable forward-simulation state for one region, all paths at once."""

    def __init__(self, posterior: BstsPosterior, gev_fits, n_paths: int, rng):
        if posterior.n_draws < 1:
            raise NumericError("posterior has no retained draws to forecast from")
        idx = rng.integers(0, posterior.n_draws, size=n_paths)
        last = posterior.states[idx, -1, :]
        self.level = last[:, 0].copy()
        self.slope = last[:, 1].copy()
        ns = posterior.seasonal_period - 1 if posterior.seasonal_period > 1 else 0
        self.ns = ns
        self.seasonal = last[:, 2 : 2 + ns].copy()
        a0 = 2 + ns
        p = posterior.ar_order
        self.ar = last[:, a0 : a0 + p].copy()
        self.betas = last[:, a0 + p :].copy()
        self.psi = posterior.psi[idx].copy()
        sd = np.sqrt(posterior.variances[idx])
        (
            self.sd_eps,
            self.sd_level,
            self.sd_slope,
            self.sd_seasonal,
            self.sd_ar,
            self.sd_beta,
        ) = sd.T.copy()
        self.gev_fits = gev_fits
        self.mu = np.zeros((len(gev_fits), n_paths))
        for m, fit in enumerate(gev_fits):
            self.mu[m] = fit.mu_path[-1]

    def step_structural(self, rng) -> np.ndarray:
        """Advance all state blocks one year; return level+seasonal+AR parts."""
        P = self.level.shape[0]
        new_level = self.level + self.slope + rng.normal(size=P) * self.sd_level
        self.slope = self.slope + rng.normal(size=P) * self.sd_slope
        self.level = new_level
        seasonal_now = np.zeros(P)
        if self.ns:
            head = -self.seasonal.sum(axis=1) + rng.normal(size=P) * self.sd_seasonal
            self.seasonal = np.column_stack([head, self.seasonal[:, :-1]])
            seasonal_now = head
        head = (self.ar * self.psi).sum(axis=1) + rng.normal(size=P) * self.sd_ar
        self.ar = np.column_stack([head, self.ar[:, :-1]])
        ar_term = (self.ar * self.psi).sum(axis=1)
        if self.betas.shape[1]:
            self.betas = self.betas + rng.normal(size=self.betas.shape) * self.sd_beta[:, None]
        return self.level + seasonal_now + ar_term

    def step_covariates(self, rng) -> np.ndarray:
        """Advance each index's GEV location and draw new index values."""
        P = self.level.shape[0]
        out = np.empty_like(self.mu)
        for m, fit in enumerate(self.gev_fits):
            self.mu[m] = fit.phi * self.mu[m] + rng.normal(size=P) * fit.sigma_mu
            u = rng.uniform(_UCLIP, 1.0 - _UCLIP, size=P)
            out[m] = gev_quantile(u, self.mu[m], fit.sigma, fit.xi)
        return out


def _simulate_paths(pipeline, region_slots, horizon: int, n_paths: int, rng):
    """One vectorized sweep of the forecasting recursion.

    ``region_slots`` selects which pipeline regions to simulate; the copula
    coupling is active only when both regions of a two-medoid pipeline are
    present.
    """
    states = [
        _RegionState(
            pipeline.posteriors[k], pipeline.gev_fits[k], n_paths, rng
        )
        for k in region_slots
    ]
    coupled = pipeline.model is not None and len(region_slots) == 2
    if coupled:
        evo = pipeline.model.evolution
        fam = get_family(evo.family)
        theta = np.full(n_paths, pipeline.model.thetas[-1])
    out = np.empty((len(region_slots), horizon, n_paths))
    for h in range(horizon):
        bases = [st.step_structural(rng) for st in states]
        zs = [st.step_covariates(rng) for st in states]  # each (M, P)
        if coupled:
            x = np.maximum(zs[0], zs[1])
            raw = evo.omega + evo.alpha * theta + evo.gammas @ x
            theta = np.asarray(fam.link(raw), dtype=float)
            u_first = rng.uniform(_UCLIP, 1.0 - _UCLIP, size=n_paths)
            w = rng.uniform(_UCLIP, 1.0 - _UCLIP, size=n_paths)
            u_second = np.clip(
                fam.cond_quantile(w, u_first, theta), _UCLIP, 1.0 - _UCLIP
            )
            u_regions = (u_first, u_second)
        else:
            u_regions = tuple(
                rng.uniform(_UCLIP, 1.0 - _UCLIP, size=n_paths)
                for _ in region_slots
            )
        for i, st in enumerate(states):
            eps = ndtri(u_regions[i]) * st.sd_eps
            reg = (st.betas * zs[i].T).sum(axis=1) if st.betas.shape[1] else 0.0
            out[i, h] = bases[i] + reg + eps
    return out


def _forecast_impl(pipeline, region_slots, horizon, n_paths, rng):
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    paths = _simulate_paths(pipeline, region_slots, horizon, n_paths, rng)
    discarded = 0
    budget = max(1, int(0.01 * n_paths))
    for _ in range(8):
        bad = np.flatnonzero(~np.isfinite(paths).all(axis=(0, 1)))
        if bad.size == 0:
            break
        discarded += bad.size
        if discarded > budget:
            raise NumericError(
                f"{discarded} of {n_paths} forecast paths were non-finite "
                "(more than the 1% discard budget)"
            )
        paths[:, :, bad] = _simulate_paths(
            pipeline, region_slots, horizon, bad.size, rng
        )
    else:
        raise NumericError("forecast paths kept producing non-finite values")
    last_year = int(pipeline.scenario.yields.years[-1])
    years = np.arange(last_year + 1, last_year + 1 + horizon)
    mean, (q025, q975) = path_summaries(paths)
    return paths, years, mean, q025, q975, discarded


def forecast(
    pipeline: FittedPipeline,
    horizon: int,
    n_paths: int,
    rng=None,
) -> ForecastDistribution:
    """Simulate the joint yield distribution ``horizon`` years ahead.

    Each path draws one retained posterior sample per region, propagates the
    structural states by their transition law, simulates covariates from the
    dynamic GEV fits, advances the copula parameter on the cross-region
    maxima, and couples the two regions' residuals through the copula.
    Non-finite paths are redrawn; more than 1% of them is an error.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    slots = list(range(pipeline.n_medoids))
    paths, years, mean, q025, q975, discarded = _forecast_impl(
        pipeline, slots, horizon, n_paths, rng
    )
    return ForecastDistribution(
        region_ids=pipeline.medoid_ids,
        years=years,
        paths=paths,
        mean=mean,
        q025=q025,
        q975=q975,
        n_discarded=discarded,
    )


def marginal_forecast(
    pipeline: FittedPipeline,
    region: int,
    horizon: int,
    n_paths: int,
    rng=None,
) -> ForecastDistribution:
    """Forecast one pipeline region alone, with no copula coupling.

    The structural and covariate simulations are identical to
    :func:`forecast`; only the residual is drawn independently.  ``region``
    indexes the pipeline's medoid list.
    """
    if not 0 <= region < pipeline.n_medoids:
        raise ValueError(f"region must index the medoid list, got {region}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    paths, years, mean, q025, q975, discarded = _forecast_impl(
        pipeline, [region], horizon, n_paths, rng
    )
    return ForecastDistribution(
        region_ids=(pipeline.medoid_ids[region],),
        years=years,
        paths=paths,
        mean=mean,
        q025=q025,
        q975=q975,
        n_discarded=discarded,
    )


# ---------------------------------------------------------------------------
# Synthetic scenario generation


@dataclass
class SyntheticTruth:
    """True parameters for a generated fit-and-forecast scenario.

    Defaults give the canonical two-region, one-index Clayton setup used in
    the recovery checks.  Structural parameters are shared across regions
    except for the starting level and slope; ``block_rho`` only matters for
    more than two regions, where residual dependence is exchangeable
    Gaussian within two latent blocks.
    """

    n_regions: int = 2
    n_indices: int = 1
    n_years: int = 120
    start_year: int = 1900
    psi: Tuple[float, ...] = (0.5,)
    seasonal_period: int = 1
    sig2_eps: float = 1.0
    sig2_level: float = 0.05
    sig2_slope: float = 0.002
    sig2_seasonal: float = 0.0
    sig2_ar: float = 0.5
    sig2_beta: float = 5e-4
    level0: Tuple[float, ...] = (55.0, 48.0)
    slope0: Tuple[float, ...] = (0.35, 0.28)
    beta0: float = 0.8
    gev_phi: float = 0.8
    gev_sigma_mu: float = 0.6
    gev_sigma: float = 2.0
    gev_xi: float = 0.1
    family: str = "clayton"
    omega: float = -0.8
    alpha: float = 0.15
    gammas: Tuple[float, ...] = (0.05,)
    block_rho: Tuple[float, float] = (0.7, 0.1)

    def theta_start(self) -> float:
        fam = get_family(self.family)
        return float(fam.link(self.omega / (1.0 - self.alpha)))

    def region_metas(self) -> Tuple[RegionMeta, ...]:
        out = []
        for d in range(self.n_regions):
            out.append(
                RegionMeta(
                    region_id=f"R{d:02d}",
                    name=f"region-{d:02d}",
                    latitude=43.0 + 0.8 * (d % 4),
                    longitude=-81.0 + 1.1 * (d // 4) + 0.15 * d,
                )
            )
        return tuple(out)


@dataclass
class SyntheticRecord:
    """Realized truth paths emitted alongside the generated panels."""

    truth: SyntheticTruth
    levels: np.ndarray       # (D, T)
    slopes: np.ndarray       # (D, T)
    seasonal_blocks: np.ndarray  # (D, S-1) terminal seasonal state
    ar_blocks: np.ndarray    # (D, T, p) lag vectors after each transition
    betas: np.ndarray        # (D, M, T)
    residuals: np.ndarray    # (D, T)
    u: np.ndarray            # (D, T)
    thetas: np.ndarray       # (T,)
    taus: np.ndarray         # (T,)
    mu: np.ndarray           # (D, M, T)


def _block_correlation(D: int, rho_within: float, rho_between: float) -> np.ndarray:
    half = D // 2
    corr = np.full((D, D), rho_between)
    corr[:half, :half] = rho_within
    corr[half:, half:] = rho_within
    np.fill_diagonal(corr, 1.0)
    return corr


def generate_synthetic(truth: Optional[SyntheticTruth] = None, rng=None):
    """Simulate panels from known parameters.

    Returns ``(yield_panel, covariate_panel, record)``; the record carries
    every latent path so estimates can be compared against truth and so the
    generator can be continued past the last year.  With two regions the
    residual pair follows the configured copula evolution; with more regions
    it follows a static two-block Gaussian structure (dependence-clustering
    plumbing, not the bivariate model).
    """
    if truth is None:
        truth = SyntheticTruth()
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    D, M, T = truth.n_regions, truth.n_indices, truth.n_years
    p = len(truth.psi)
    S = truth.seasonal_period
    ns = S - 1 if S > 1 else 0
    psi = np.asarray(truth.psi)
    if len(truth.level0) < D or len(truth.slope0) < D:
        raise ValueError("level0/slope0 must supply one value per region")

    sd = {
        "eps": np.sqrt(truth.sig2_eps),
        "level": np.sqrt(truth.sig2_level),
        "slope": np.sqrt(truth.sig2_slope),
        "seasonal": np.sqrt(truth.sig2_seasonal),
        "ar": np.sqrt(truth.sig2_ar),
        "beta": np.sqrt(truth.sig2_beta),
    }

    level = np.array(truth.level0[:D], dtype=float)
    slope = np.array(truth.slope0[:D], dtype=float)
    seas = np.zeros((D, ns))
    ar = np.zeros((D, p))
    betas = np.full((D, M), truth.beta0, dtype=float)
    mu = np.zeros((D, M))

    levels = np.empty((D, T))
    slopes = np.empty((D, T))
    ar_blocks = np.empty((D, T, p))
    beta_paths = np.empty((D, M, T))
    mu_paths = np.empty((D, M, T))
    z = np.empty((D, M, T))
    u_panel = np.empty((D, T))
    eps_panel = np.empty((D, T))
    thetas = np.empty(T)
    y = np.empty((D, T))

    fam = get_family(truth.family)
    theta_prev = truth.theta_start()
    corr = _block_correlation(D, *truth.block_rho) if D != 2 else None
    chol = np.linalg.cholesky(corr) if corr is not None else None

    for t in range(T):
        new_level = level + slope + rng.normal(0.0, sd["level"], D)
        slope = slope + rng.normal(0.0, sd["slope"], D)
        level = new_level
        seasonal_now = np.zeros(D)
        if ns:
            head = -seas.sum(axis=1) + rng.normal(0.0, sd["seasonal"], D)
            seas = np.column_stack([head, seas[:, :-1]])
            seasonal_now = head
        head = ar @ psi + rng.normal(0.0, sd["ar"], D)
        ar = np.column_stack([head, ar[:, :-1]])
        betas = betas + rng.normal(0.0, sd["beta"], (D, M))

        mu = truth.gev_phi * mu + rng.normal(0.0, truth.gev_sigma_mu, (D, M))
        uz = rng.uniform(_UCLIP, 1.0 - _UCLIP, (D, M))
        z[:, :, t] = gev_quantile(uz, mu, truth.gev_sigma, truth.gev_xi)

        if D == 2:
            x = z[:, :, t].max(axis=0)
            raw = truth.omega + truth.alpha * theta_prev + np.dot(truth.gammas, x)
            theta_prev = float(fam.link(raw))
            u1 = rng.uniform(_UCLIP, 1.0 - _UCLIP)
            w = rng.uniform(_UCLIP, 1.0 - _UCLIP)
            u2 = float(np.clip(fam.cond_quantile(w, u1, theta_prev), _UCLIP, 1 - _UCLIP))
            u_t = np.array([u1, u2])
        else:
            g = chol @ rng.normal(size=D)
            u_t = np.clip(ndtr(g), _UCLIP, 1.0 - _UCLIP)
            theta_prev = float("nan")
        thetas[t] = theta_prev
        eps = ndtri(u_t) * sd["eps"]

        y[:, t] = (
            level
            + seasonal_now
            + ar @ psi
            + (betas * z[:, :, t]).sum(axis=1)
            + eps
        )
        levels[:, t] = level
        slopes[:, t] = slope
        ar_blocks[:, t] = ar
        beta_paths[:, :, t] = betas
        mu_paths[:, :, t] = mu
        u_panel[:, t] = u_t
        eps_panel[:, t] = eps

    years = np.arange(truth.start_year, truth.start_year + T)
    yp = YieldPanel(regions=truth.region_metas(), years=years, values=y)
    names = tuple(f"idx{m}" for m in range(M))
    cp = CovariatePanel(index_names=names, years=years, values=z)
    taus = (
        np.array([fam.tau(th) for th in thetas])
        if D == 2
        else np.full(T, np.nan)
    )
    record = SyntheticRecord(
        truth=truth,
        levels=levels,
        slopes=slopes,
        seasonal_blocks=seas,
        ar_blocks=ar_blocks,
        betas=beta_paths,
        residuals=eps_panel,
        u=u_panel,
        thetas=thetas,
        taus=taus,
        mu=mu_paths,
    )
    return yp, cp, record


def simulate_future_truth(
    record: SyntheticRecord, horizon: int, n_reps: int, rng=None
) -> np.ndarray:
    """Continue the generator past its last year, many times.

    Returns future yields of shape (regions, horizon, reps), started from
    the record's terminal latent state — the reference distribution for
    checking forecast-band coverage.
    """
    if horizon < 1 or n_reps < 1:
        raise ValueError("horizon and n_reps must be >= 1")
    truth = record.truth
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    D, M = record.mu.shape[0], record.mu.shape[1]
    p = len(truth.psi)
    psi = np.asarray(truth.psi)
    ns = truth.seasonal_period - 1 if truth.seasonal_period > 1 else 0
    fam = get_family(truth.family)

    R = n_reps
    level = np.tile(record.levels[:, -1][:, None], (1, R))
    slope = np.tile(record.slopes[:, -1][:, None], (1, R))
    seas = np.tile(record.seasonal_blocks[:, :, None], (1, 1, R))
    ar = np.tile(record.ar_blocks[:, -1, :, None], (1, 1, R))
    betas = np.tile(record.betas[:, :, -1][:, :, None], (1, 1, R))
    mu = np.tile(record.mu[:, :, -1][:, :, None], (1, 1, R))
    theta = np.full(R, record.thetas[-1])
    corr = _block_correlation(D, *truth.block_rho) if D != 2 else None
    chol = np.linalg.cholesky(corr) if corr is not None else None

    sd_eps = np.sqrt(truth.sig2_eps)
    out = np.empty((D, horizon, R))
    for h in range(horizon):
        new_level = level + slope + rng.normal(0, np.sqrt(truth.sig2_level), (D, R))
        slope = slope + rng.normal(0, np.sqrt(truth.sig2_slope), (D, R))
        level = new_level
        seasonal_now = np.zeros((D, R))
        if ns:
            head = -seas.sum(axis=1) + rng.normal(0, np.sqrt(truth.sig2_seasonal), (D, R))
            seas = np.concatenate([head[:, None, :], seas[:, :-1, :]], axis=1)
            seasonal_now = head
        head = np.einsum("dpr,p->dr", ar, psi) + rng.normal(
            0, np.sqrt(truth.sig2_ar), (D, R)
        )
        ar = np.concatenate([head[:, None, :], ar[:, :-1, :]], axis=1)
        betas = betas + rng.normal(0, np.sqrt(truth.sig2_beta), (D, M, R))

        mu = truth.gev_phi * mu + rng.normal(0, truth.gev_sigma_mu, (D, M, R))
        uz = rng.uniform(_UCLIP, 1.0 - _UCLIP, (D, M, R))
        z = gev_quantile(uz, mu, truth.gev_sigma, truth.gev_xi)

        if D == 2:
            x = z.max(axis=0)  # (M, R)
            raw = truth.omega + truth.alpha * theta + np.dot(truth.gammas, x)
            theta = np.asarray(fam.link(raw), dtype=float)
            u1 = rng.uniform(_UCLIP, 1.0 - _UCLIP, R)
            w = rng.uniform(_UCLIP, 1.0 - _UCLIP, R)
            u2 = np.clip(fam.cond_quantile(w, u1, theta), _UCLIP, 1.0 - _UCLIP)
            u_t = np.stack([u1, u2])
        else:
            g = np.einsum("de,er->dr", chol, rng.normal(size=(D, R)))
            u_t = np.clip(ndtr(g), _UCLIP, 1.0 - _UCLIP)
        eps = ndtri(u_t) * sd_eps
        out[:, h, :] = (
            level
            + seasonal_now
            + np.einsum("dpr,p->dr", ar, psi)
            + (betas * z).sum(axis=1)
            + eps
        )
    return out
