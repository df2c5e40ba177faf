"""File formats, run configuration, and pipeline artifact persistence.

CSV schemas (UTF-8, header row required, ``.`` decimal separator):

* yields: ``region_id, year, yield``
* covariates (long format): ``region_id, year, index_name, value``
* regions: ``region_id, name, latitude, longitude``

Run configuration is a JSON file; see :class:`RunConfig` for the schema.
The environment variables ``CROPCAST_SEED`` and ``CROPCAST_OUTDIR``
override the file's seed and output directory; no other environment
variables are consulted, so all remaining randomness flows from the
configured seed.

A fitted pipeline persists to a directory::

    manifest.json         format marker plus a fingerprint of the data
    bsts/<region_id>.npz  retained Gibbs draws for each medoid region
    pseudo_obs.csv        medoid pseudo-observations (region_id, year, u)
    clustering.json       medoid-selection report
    copula.json           time-varying dependence fit
    gev.json              dynamic tail fits per medoid region and index

Floats are serialized with ``repr``, the shortest text that parses back to
the identical double, so every emitted file re-ingests to the exact
in-memory values and identical seeds reproduce identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import clustering as clus
from .bsts import BstsPosterior
from .copulas import FAMILY_NAMES, CopulaEvolution, FullModelFit, get_family
from .errors import ArtifactError, ConfigError
from .forecast import FittedPipeline, ForecastDistribution, path_summaries
from .gev import GevDynamicFit
from .panels import (
    BstsConfig,
    CovariatePanel,
    FitScenario,
    OptimizerSettings,
    RegionMeta,
    YieldPanel,
)

__all__ = [
    "FORMAT_VERSION",
    "ENV_SEED",
    "ENV_OUTDIR",
    "RunConfig",
    "load_config",
    "build_scenario",
    "read_regions_csv",
    "write_regions_csv",
    "read_yield_csv",
    "write_yield_csv",
    "read_covariate_csv",
    "write_covariate_csv",
    "save_pipeline",
    "load_pipeline",
    "write_cluster_report",
    "write_pseudo_obs",
    "write_json",
    "write_forecast_paths",
    "read_forecast_paths",
    "write_forecast_summary",
    "write_metrics_csv",
]

FORMAT_VERSION = 1
ENV_SEED = "CROPCAST_SEED"
ENV_OUTDIR = "CROPCAST_OUTDIR"

_YIELD_HEADER = ("region_id", "year", "yield")
_COVARIATE_HEADER = ("region_id", "year", "index_name", "value")
_REGION_HEADER = ("region_id", "name", "latitude", "longitude")


# ---------------------------------------------------------------------------
# CSV primitives


def _read_rows(path, header: Tuple[str, ...]) -> List[list]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ArtifactError(f"{path}: file is empty") from None
        if tuple(c.strip() for c in got) != header:
            raise ArtifactError(
                f"{path}: expected header {','.join(header)!r}, "
                f"got {','.join(got)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ArtifactError(
                    f"{path}:{lineno}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            rows.append(row)
    return rows


def _new_writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _parse_float(path, lineno, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise ArtifactError(f"{path}:{lineno}: {text!r} is not a number") from None


def _parse_int(path, lineno, text) -> int:
    try:
        return int(text)
    except ValueError:
        raise ArtifactError(f"{path}:{lineno}: {text!r} is not an integer") from None


def read_regions_csv(path) -> List[RegionMeta]:
    """Region metadata in file order; duplicate ids are rejected."""
    metas: List[RegionMeta] = []
    seen = set()
    for lineno, row in enumerate(_read_rows(path, _REGION_HEADER), start=2):
        rid = row[0].strip()
        if rid in seen:
            raise ArtifactError(f"{path}:{lineno}: duplicate region_id {rid!r}")
        seen.add(rid)
        metas.append(
            RegionMeta(
                region_id=rid,
                name=row[1].strip(),
                latitude=_parse_float(path, lineno, row[2]),
                longitude=_parse_float(path, lineno, row[3]),
            )
        )
    if not metas:
        raise ArtifactError(f"{path}: no regions listed")
    return metas


def write_regions_csv(path, regions: Sequence[RegionMeta]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _new_writer(fh)
        w.writerow(_REGION_HEADER)
        for r in regions:
            w.writerow([r.region_id, r.name, repr(r.latitude), repr(r.longitude)])


def _assemble_panel(path, cells: Dict, region_ids, years, what: str) -> np.ndarray:
    """Dense (D, T) array from {(region_id, year): value} with gap checks."""
    out = np.empty((len(region_ids), len(years)))
    for d, rid in enumerate(region_ids):
        for t, year in enumerate(years):
            try:
                out[d, t] = cells[rid, year]
            except KeyError:
                raise ArtifactError(
                    f"{path}: no {what} for region {rid!r} in year {year}"
                ) from None
    return out


def read_yield_csv(path, regions: Sequence[RegionMeta]) -> YieldPanel:
    """Long-format yield table aligned to the given region ordering."""
    known = {r.region_id for r in regions}
    cells: Dict[Tuple[str, int], float] = {}
    years = set()
    for lineno, row in enumerate(_read_rows(path, _YIELD_HEADER), start=2):
        rid = row[0].strip()
        if rid not in known:
            raise ArtifactError(
                f"{path}:{lineno}: region {rid!r} is not in the region table"
            )
        year = _parse_int(path, lineno, row[1])
        if (rid, year) in cells:
            raise ArtifactError(
                f"{path}:{lineno}: duplicate entry for region {rid!r}, year {year}"
            )
        cells[rid, year] = _parse_float(path, lineno, row[2])
        years.add(year)
    if not cells:
        raise ArtifactError(f"{path}: no yield observations")
    year_list = sorted(years)
    region_ids = [r.region_id for r in regions]
    values = _assemble_panel(path, cells, region_ids, year_list, "yield")
    return YieldPanel(regions=tuple(regions), years=np.array(year_list), values=values)


def write_yield_csv(path, panel: YieldPanel) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _new_writer(fh)
        w.writerow(_YIELD_HEADER)
        for d, rid in enumerate(panel.region_ids):
            for t, year in enumerate(panel.years):
                w.writerow([rid, int(year), repr(float(panel.values[d, t]))])


def read_covariate_csv(path, regions: Sequence[RegionMeta]) -> CovariatePanel:
    """Long-format covariate table; index order follows first appearance."""
    known = {r.region_id for r in regions}
    cells: Dict[Tuple[str, str, int], float] = {}
    years = set()
    index_names: List[str] = []
    for lineno, row in enumerate(_read_rows(path, _COVARIATE_HEADER), start=2):
        rid = row[0].strip()
        if rid not in known:
            raise ArtifactError(
                f"{path}:{lineno}: region {rid!r} is not in the region table"
            )
        year = _parse_int(path, lineno, row[1])
        name = row[2].strip()
        if name not in index_names:
            index_names.append(name)
        if (rid, name, year) in cells:
            raise ArtifactError(
                f"{path}:{lineno}: duplicate entry for region {rid!r}, "
                f"index {name!r}, year {year}"
            )
        cells[rid, name, year] = _parse_float(path, lineno, row[3])
        years.add(year)
    if not cells:
        raise ArtifactError(f"{path}: no covariate observations")
    year_list = sorted(years)
    region_ids = [r.region_id for r in regions]
    values = np.empty((len(region_ids), len(index_names), len(year_list)))
    for m, name in enumerate(index_names):
        values[:, m, :] = _assemble_panel(
            path,
            {(r, y): v for (r, n, y), v in cells.items() if n == name},
            region_ids,
            year_list,
            f"index {name!r}",
        )
    return CovariatePanel(
        index_names=tuple(index_names),
        years=np.array(year_list),
        values=values,
    )


def write_covariate_csv(path, panel: CovariatePanel, region_ids: Sequence[str]) -> None:
    if len(region_ids) != panel.n_regions:
        raise ValueError(
            f"{len(region_ids)} region ids for {panel.n_regions} panel regions"
        )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _new_writer(fh)
        w.writerow(_COVARIATE_HEADER)
        for d, rid in enumerate(region_ids):
            for t, year in enumerate(panel.years):
                for m, name in enumerate(panel.index_names):
                    w.writerow(
                        [rid, int(year), name, repr(float(panel.values[d, m, t]))]
                    )


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    """One run's worth of settings, resolved from JSON + overrides.

    JSON schema (all sections optional unless a command needs them)::

        {
          "data": {"yields": "...", "covariates": "...", "regions": "..."},
          "family": "gumbel",
          "families": ["gumbel", "clayton", ...],      # for compare
          "seed": 0,
          "outdir": "out",
          "threads": 1,
          "n_clusters": 2,
          "bsts": {"n_iter": 10000, "burn_in": 2000, ...},
          "optimizer": {"max_evals": 4000, "tol": 1e-8, "restarts": 3},
          "clustering": {"beta_grid": [...], "k_candidates": [...]},
          "forecast": {"horizon": 10, "n_paths": 1000},
          "compare": {"rank_by": "loglik"},            # or "amse"
          "simulate": {...}                            # synthetic-data knobs
        }

    Relative data paths resolve against the config file's directory.
    """

    yields_path: Optional[str] = None
    covariates_path: Optional[str] = None
    regions_path: Optional[str] = None
    family: str = "gumbel"
    families: Tuple[str, ...] = ()
    bsts: BstsConfig = dataclasses.field(default_factory=BstsConfig)
    optimizer: OptimizerSettings = dataclasses.field(default_factory=OptimizerSettings)
    n_clusters: int = 2
    beta_grid: Optional[Tuple[float, ...]] = None
    k_candidates: Optional[Tuple[int, ...]] = None
    horizon: int = 10
    n_paths: int = 1000
    seed: int = 0
    outdir: str = "out"
    threads: int = 1
    rank_by: str = "loglik"
    simulate: Optional[dict] = None


_TOP_KEYS = {
    "data",
    "family",
    "families",
    "seed",
    "outdir",
    "threads",
    "n_clusters",
    "bsts",
    "optimizer",
    "clustering",
    "forecast",
    "compare",
    "simulate",
}


def _check_family(name) -> str:
    try:
        return get_family(name).name
    except KeyError:
        raise ConfigError(
            f"unknown copula family {name!r}; valid families: "
            + ", ".join(FAMILY_NAMES)
        ) from None


def _section(raw: dict, key: str, allowed) -> dict:
    sec = raw.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {key!r} must be an object")
    if allowed is not None:
        unknown = set(sec) - set(allowed)
        if unknown:
            raise ConfigError(
                f"unknown keys in config section {key!r}: {sorted(unknown)}"
            )
    return sec


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Read a JSON run configuration.

    Precedence, lowest to highest: file values, the ``CROPCAST_SEED`` /
    ``CROPCAST_OUTDIR`` environment variables, then ``overrides`` (the
    command-line flags).  File existence of the referenced data CSVs is
    checked when a scenario is built, not here, so a config may point at
    files a later ``simulate`` step will create.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")

    data = _section(raw, "data", ("yields", "covariates", "regions"))

    def _data_path(key):
        if key not in data:
            return None
        p = Path(str(data[key]))
        if not p.is_absolute():
            p = path.parent / p
        return str(p)

    try:
        bsts = BstsConfig(**_section(raw, "bsts", None))
        optimizer = OptimizerSettings(**_section(raw, "optimizer", None))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from None

    clustering = _section(raw, "clustering", ("beta_grid", "k_candidates"))
    beta_grid = clustering.get("beta_grid")
    if beta_grid is not None:
        beta_grid = tuple(float(b) for b in beta_grid)
        if not beta_grid or any(not 0.0 <= b <= 1.0 for b in beta_grid):
            raise ConfigError(f"{path}: beta_grid values must lie in [0, 1]")
    k_candidates = clustering.get("k_candidates")
    if k_candidates is not None:
        k_candidates = tuple(int(k) for k in k_candidates)
        if not k_candidates or any(k < 1 for k in k_candidates):
            raise ConfigError(f"{path}: k_candidates must be positive integers")

    fc = _section(raw, "forecast", ("horizon", "n_paths"))
    compare = _section(raw, "compare", ("rank_by",))
    rank_by = str(compare.get("rank_by", "loglik"))
    if rank_by not in ("loglik", "amse"):
        raise ConfigError(
            f"{path}: compare.rank_by must be 'loglik' or 'amse', got {rank_by!r}"
        )

    families = raw.get("families", ())
    if not isinstance(families, (list, tuple)):
        raise ConfigError(f"{path}: 'families' must be a list")

    simulate = raw.get("simulate")
    if simulate is not None and not isinstance(simulate, dict):
        raise ConfigError(f"{path}: 'simulate' must be an object")

    settings = {
        "yields_path": _data_path("yields"),
        "covariates_path": _data_path("covariates"),
        "regions_path": _data_path("regions"),
        "family": raw.get("family", "gumbel"),
        "families": tuple(families),
        "bsts": bsts,
        "optimizer": optimizer,
        "n_clusters": raw.get("n_clusters", 2),
        "beta_grid": beta_grid,
        "k_candidates": k_candidates,
        "horizon": fc.get("horizon", 10),
        "n_paths": fc.get("n_paths", 1000),
        "seed": raw.get("seed", 0),
        "outdir": raw.get("outdir", "out"),
        "threads": raw.get("threads", 1),
        "rank_by": rank_by,
        "simulate": simulate,
    }

    if ENV_SEED in os.environ:
        settings["seed"] = os.environ[ENV_SEED]
    if ENV_OUTDIR in os.environ:
        settings["outdir"] = os.environ[ENV_OUTDIR]
    for key, value in (overrides or {}).items():
        if key not in settings:
            raise ConfigError(f"unknown override {key!r}")
        settings[key] = value

    for key in ("seed", "n_clusters", "horizon", "n_paths", "threads"):
        try:
            settings[key] = int(settings[key])
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: {key} must be an integer") from None
    if settings["horizon"] < 1:
        raise ConfigError(f"{path}: forecast horizon must be >= 1")
    if settings["n_paths"] < 1:
        raise ConfigError(f"{path}: number of forecast paths must be >= 1")
    if settings["threads"] < 1:
        raise ConfigError(f"{path}: threads must be >= 1")
    if settings["n_clusters"] < 1:
        raise ConfigError(f"{path}: n_clusters must be >= 1")

    settings["family"] = _check_family(settings["family"])
    settings["families"] = tuple(_check_family(f) for f in settings["families"])
    settings["outdir"] = str(settings["outdir"])
    return RunConfig(**settings)


def build_scenario(config: RunConfig) -> FitScenario:
    """Load the configured data files into a fit scenario.

    Missing path entries or nonexistent files raise :class:`ConfigError`
    naming the offending path.
    """
    for label, p in (
        ("regions", config.regions_path),
        ("yields", config.yields_path),
        ("covariates", config.covariates_path),
    ):
        if p is None:
            raise ConfigError(f"config has no data.{label} entry")
        if not Path(p).exists():
            raise ConfigError(f"{label} file does not exist: {p}")
    regions = read_regions_csv(config.regions_path)
    yields = read_yield_csv(config.yields_path, regions)
    covariates = read_covariate_csv(config.covariates_path, regions)
    return FitScenario(
        yields=yields,
        covariates=covariates,
        family=config.family,
        bsts=config.bsts,
        optimizer=config.optimizer,
        horizon=config.horizon,
        n_paths=config.n_paths,
        seed=config.seed,
        n_clusters=config.n_clusters,
    )


# ---------------------------------------------------------------------------
# Pipeline artifacts


def write_json(obj, path) -> None:
    """JSON with stable 2-space formatting (deterministic for fixed input)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _json_load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"missing artifact file: {path}") from None
    except json.JSONDecodeError as err:
        raise ArtifactError(f"{path}: invalid JSON ({err})") from None


def _cluster_to_dict(result: clus.ClusterResult) -> dict:
    return {
        "n_clusters": result.n_clusters,
        "medoids": list(result.medoids),
        "assignment": [int(a) for a in result.assignment],
        "total_cost": result.total_cost,
        "dunn": result.dunn,
        "silhouette_mean": result.silhouette_mean,
        "beta": result.beta,
    }


def _cluster_from_dict(d: dict) -> clus.ClusterResult:
    return clus.ClusterResult(
        n_clusters=int(d["n_clusters"]),
        medoids=tuple(int(m) for m in d["medoids"]),
        assignment=np.array(d["assignment"], dtype=int),
        total_cost=float(d["total_cost"]),
        dunn=float(d["dunn"]),
        silhouette_mean=float(d["silhouette_mean"]),
        beta=d["beta"],
    )


def write_cluster_report(path, result: clus.ClusterResult, region_ids) -> None:
    """Medoid-selection report as JSON."""
    write_json(
        {
            "format_version": FORMAT_VERSION,
            "region_ids": list(region_ids),
            **_cluster_to_dict(result),
        },
        path,
    )


def write_pseudo_obs(path, region_ids, years, u) -> None:
    """Long-format pseudo-observation table (region_id, year, u)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _new_writer(fh)
        w.writerow(("region_id", "year", "u"))
        for k, rid in enumerate(region_ids):
            for t, year in enumerate(years):
                w.writerow([rid, int(year), repr(float(u[k, t]))])


def _gev_to_dict(fit: GevDynamicFit) -> dict:
    return {
        "phi": fit.phi,
        "sigma_mu": fit.sigma_mu,
        "sigma": fit.sigma,
        "xi": fit.xi,
        "mu_path": [float(m) for m in fit.mu_path],
        "loglik": fit.loglik,
        "converged": fit.converged,
        "n_evals": fit.n_evals,
    }


def _gev_from_dict(d: dict) -> GevDynamicFit:
    return GevDynamicFit(
        phi=float(d["phi"]),
        sigma_mu=float(d["sigma_mu"]),
        sigma=float(d["sigma"]),
        xi=float(d["xi"]),
        mu_path=np.array(d["mu_path"], dtype=float),
        loglik=float(d["loglik"]),
        converged=bool(d["converged"]),
        n_evals=int(d["n_evals"]),
    )


def save_pipeline(outdir, pipeline: FittedPipeline) -> None:
    """Persist a fitted pipeline under ``outdir`` (created if needed)."""
    outdir = Path(outdir)
    (outdir / "bsts").mkdir(parents=True, exist_ok=True)
    scenario = pipeline.scenario

    manifest = {
        "format_version": FORMAT_VERSION,
        "family": scenario.family,
        "seed": scenario.seed,
        "n_clusters": scenario.n_clusters,
        "region_ids": list(scenario.yields.region_ids),
        "years": [int(y) for y in scenario.yields.years],
        "index_names": list(scenario.covariates.index_names),
        "medoid_indices": list(pipeline.medoid_indices),
        "medoid_ids": list(pipeline.medoid_ids),
        "bsts": dataclasses.asdict(scenario.bsts),
        "marginal_only": pipeline.marginal_only,
        "clustered": pipeline.cluster is not None,
    }
    write_json(manifest, outdir / "manifest.json")

    for rid, post in zip(pipeline.medoid_ids, pipeline.posteriors):
        np.savez_compressed(
            outdir / "bsts" / f"{rid}.npz",
            psi=post.psi,
            variances=post.variances,
            states=post.states,
            residuals=post.residuals,
            ar_order=post.ar_order,
            seasonal_period=post.seasonal_period,
            n_covariates=post.n_covariates,
            seed=post.seed,
        )

    write_pseudo_obs(
        outdir / "pseudo_obs.csv",
        pipeline.medoid_ids,
        scenario.yields.years,
        pipeline.pseudo_obs,
    )

    if pipeline.cluster is not None:
        write_cluster_report(
            outdir / "clustering.json",
            pipeline.cluster,
            scenario.yields.region_ids,
        )

    copula = {"format_version": FORMAT_VERSION, "marginal_only": pipeline.marginal_only}
    if pipeline.model is not None:
        ev = pipeline.model.evolution
        copula.update(
            family=ev.family,
            omega=ev.omega,
            alpha=ev.alpha,
            gammas=[float(g) for g in ev.gammas],
            theta_init=ev.theta_init,
            copula_loglik=pipeline.model.copula_loglik,
            gev_loglik=pipeline.model.gev_loglik,
            thetas=[float(t) for t in pipeline.model.thetas],
            taus=[float(t) for t in pipeline.model.taus],
            converged=pipeline.model.converged,
        )
    write_json(copula, outdir / "copula.json")

    write_json(
        {
            "format_version": FORMAT_VERSION,
            "fits": [[_gev_to_dict(f) for f in row] for row in pipeline.gev_fits],
        },
        outdir / "gev.json",
    )


def _check_manifest(manifest, path, scenario: FitScenario) -> None:
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactError(
            f"{path}: artifact format version {version!r} is not supported "
            f"by this build (expected {FORMAT_VERSION}); refusing to load"
        )
    if manifest.get("region_ids") != list(scenario.yields.region_ids):
        raise ArtifactError(
            f"{path}: artifact regions {manifest.get('region_ids')} do not "
            f"match the configured data {list(scenario.yields.region_ids)}"
        )
    if manifest.get("years") != [int(y) for y in scenario.yields.years]:
        raise ArtifactError(
            f"{path}: artifact was fitted on different years than the "
            "configured data"
        )
    if manifest.get("family") != scenario.family:
        raise ArtifactError(
            f"{path}: artifact was fitted with family "
            f"{manifest.get('family')!r} but the configuration requests "
            f"{scenario.family!r}; refit or change the config"
        )


def load_pipeline(outdir, scenario: FitScenario) -> FittedPipeline:
    """Reassemble a persisted pipeline, verifying it matches ``scenario``."""
    outdir = Path(outdir)
    manifest_path = outdir / "manifest.json"
    if not manifest_path.exists():
        raise ArtifactError(f"no pipeline artifacts found under {outdir}")
    manifest = _json_load(manifest_path)
    _check_manifest(manifest, manifest_path, scenario)

    try:
        config = BstsConfig(**manifest["bsts"])
    except (KeyError, TypeError, ValueError) as err:
        raise ArtifactError(f"{manifest_path}: bad bsts section ({err})") from None

    posteriors = []
    for rid in manifest["medoid_ids"]:
        npz_path = outdir / "bsts" / f"{rid}.npz"
        if not npz_path.exists():
            raise ArtifactError(f"missing artifact file: {npz_path}")
        with np.load(npz_path) as z:
            posteriors.append(
                BstsPosterior(
                    psi=z["psi"],
                    variances=z["variances"],
                    states=z["states"],
                    residuals=z["residuals"],
                    ar_order=int(z["ar_order"]),
                    seasonal_period=int(z["seasonal_period"]),
                    n_covariates=int(z["n_covariates"]),
                    config=config,
                    seed=int(z["seed"]),
                )
            )

    K = len(posteriors)
    T = scenario.yields.n_years
    u = np.full((K, T), np.nan)
    rows = _read_rows(outdir / "pseudo_obs.csv", ("region_id", "year", "u"))
    slot = {rid: k for k, rid in enumerate(manifest["medoid_ids"])}
    year_pos = {int(y): t for t, y in enumerate(scenario.yields.years)}
    for lineno, row in enumerate(rows, start=2):
        k = slot.get(row[0].strip())
        t = year_pos.get(_parse_int("pseudo_obs.csv", lineno, row[1]))
        if k is None or t is None:
            raise ArtifactError(
                f"pseudo_obs.csv:{lineno}: row does not match the manifest"
            )
        u[k, t] = _parse_float("pseudo_obs.csv", lineno, row[2])
    if np.isnan(u).any():
        raise ArtifactError("pseudo_obs.csv: incomplete pseudo-observation table")

    cluster = None
    if manifest.get("clustered"):
        cluster = _cluster_from_dict(_json_load(outdir / "clustering.json"))

    gev_doc = _json_load(outdir / "gev.json")
    gev_fits = tuple(
        tuple(_gev_from_dict(d) for d in row) for row in gev_doc.get("fits", [])
    )

    copula = _json_load(outdir / "copula.json")
    model = None
    if not copula.get("marginal_only", True):
        evolution = CopulaEvolution(
            family=copula["family"],
            omega=float(copula["omega"]),
            alpha=float(copula["alpha"]),
            gammas=np.array(copula["gammas"], dtype=float),
            theta_init=float(copula["theta_init"]),
        )
        model = FullModelFit(
            evolution=evolution,
            gev_fits=tuple(f for row in gev_fits for f in row),
            copula_loglik=float(copula["copula_loglik"]),
            gev_loglik=float(copula["gev_loglik"]),
            thetas=np.array(copula["thetas"], dtype=float),
            taus=np.array(copula["taus"], dtype=float),
            converged=bool(copula["converged"]),
        )

    return FittedPipeline(
        posteriors=tuple(posteriors),
        pseudo_obs=u,
        cluster=cluster,
        model=model,
        gev_fits=gev_fits,
        medoid_indices=tuple(int(i) for i in manifest["medoid_indices"]),
        medoid_ids=tuple(manifest["medoid_ids"]),
        scenario=scenario,
    )


# ---------------------------------------------------------------------------
# Forecast and metric outputs


def write_forecast_paths(path, dist: ForecastDistribution) -> None:
    """Long-format path table: one row per region, year, and path."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _new_writer(fh)
        w.writerow(("region", "year", "path_id", "value"))
        for d, rid in enumerate(dist.region_ids):
            for t, year in enumerate(dist.years):
                for p in range(dist.n_paths):
                    w.writerow([rid, int(year), p, repr(float(dist.paths[d, t, p]))])


def read_forecast_paths(path) -> ForecastDistribution:
    """Rebuild a forecast distribution from its long-format path table."""
    rows = _read_rows(path, ("region", "year", "path_id", "value"))
    region_ids: List[str] = []
    years: List[int] = []
    cells: Dict[Tuple[str, int, int], float] = {}
    max_path = -1
    for lineno, row in enumerate(rows, start=2):
        rid = row[0].strip()
        if rid not in region_ids:
            region_ids.append(rid)
        year = _parse_int(path, lineno, row[1])
        if year not in years:
            years.append(year)
        pid = _parse_int(path, lineno, row[2])
        max_path = max(max_path, pid)
        key = (rid, year, pid)
        if key in cells:
            raise ArtifactError(f"{path}:{lineno}: duplicate path entry {key}")
        cells[key] = _parse_float(path, lineno, row[3])
    if not cells:
        raise ArtifactError(f"{path}: no forecast paths")
    years.sort()
    paths = np.empty((len(region_ids), len(years), max_path + 1))
    for d, rid in enumerate(region_ids):
        for t, year in enumerate(years):
            for p in range(max_path + 1):
                try:
                    paths[d, t, p] = cells[rid, year, p]
                except KeyError:
                    raise ArtifactError(
                        f"{path}: missing value for region {rid!r}, year "
                        f"{year}, path {p}"
                    ) from None
    mean, (q025, q975) = path_summaries(paths)
    return ForecastDistribution(
        region_ids=tuple(region_ids),
        years=np.array(years),
        paths=paths,
        mean=mean,
        q025=q025,
        q975=q975,
    )


def write_forecast_summary(path, dist: ForecastDistribution) -> None:
    """Pointwise mean and 2.5%/97.5% quantile fan per region, as JSON."""
    doc = {
        "format_version": FORMAT_VERSION,
        "n_paths": dist.n_paths,
        "n_discarded": dist.n_discarded,
        "years": [int(y) for y in dist.years],
        "regions": {
            rid: {
                "mean": [float(v) for v in dist.mean[d]],
                "q025": [float(v) for v in dist.q025[d]],
                "q975": [float(v) for v in dist.q975[d]],
            }
            for d, rid in enumerate(dist.region_ids)
        },
    }
    write_json(doc, path)


def write_metrics_csv(path, reports) -> None:
    """Flat (model, region, metric, value) table for one or more reports."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _new_writer(fh)
        w.writerow(("model", "region", "metric", "value"))
        for report in reports:
            for model, region, metric, value in report.rows():
                w.writerow([model, region, metric, repr(float(value))])
