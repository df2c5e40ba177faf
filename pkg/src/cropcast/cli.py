"""Command-line entry point.

Commands
--------
``fit``       fit marginals, clustering, and the dependence model; persist
              the pipeline under the output directory
``cluster``   stand-alone medoid selection over a grid of spatial weights
              and cluster counts
``forecast``  simulate future yield paths from a persisted pipeline
``compare``   refit the dependence stage under several copula families and
              rank them on a held-out window
``evaluate``  score persisted forecasts against observed yields
``simulate``  generate a synthetic data set with known dynamics

Exit codes: 0 success, 2 configuration problem, 3 numeric failure,
4 file problem.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import clustering as clus
from . import io
from .bsts import extract_pseudo_observations, fit_bsts, rank_uniformize
from .errors import (
    ArtifactError,
    ConfigError,
    CropcastError,
    NumericError,
    ValidationError,
)
from .forecast import DEFAULT_BETA_GRID, fit_pipeline, forecast, generate_synthetic
from .forecast import SyntheticTruth
from .metrics import build_report
from .panels import CovariatePanel, FitScenario, YieldPanel

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cropcast",
        description="Joint forecasting of spatially dependent annual crop yields.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, metavar="N", help="override the seed")
    common.add_argument(
        "--threads",
        type=int,
        metavar="N",
        help="upper bound on worker threads (computations currently run "
        "sequentially)",
    )
    common.add_argument("--out", metavar="DIR", help="override the output directory")
    common.add_argument("--family", metavar="NAME", help="override the copula family")
    common.add_argument(
        "--horizon", type=int, metavar="N", help="override the forecast horizon"
    )
    common.add_argument(
        "--paths", type=int, metavar="N", help="override the number of sample paths"
    )

    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, doc in (
        ("fit", cmd_fit, "fit the full pipeline and persist it"),
        ("cluster", cmd_cluster, "select medoid regions over a grid"),
        ("forecast", cmd_forecast, "simulate future yields from a fitted pipeline"),
        ("compare", cmd_compare, "rank copula families on a held-out window"),
        ("evaluate", cmd_evaluate, "score persisted forecasts against actuals"),
        ("simulate", cmd_simulate, "generate a synthetic data set"),
    ):
        p = sub.add_parser(name, parents=[common], help=doc, description=doc)
        p.set_defaults(func=func)
    return parser


def _load_config(args) -> io.RunConfig:
    if args.config is None:
        raise ConfigError(f"the {args.command} command requires --config")
    overrides = {}
    for key in ("seed", "family", "horizon", "threads"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.out is not None:
        overrides["outdir"] = args.out
    if args.paths is not None:
        overrides["n_paths"] = args.paths
    return io.load_config(args.config, overrides)


def _outdir(config: io.RunConfig) -> Path:
    out = Path(config.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(args) -> int:
    config = _load_config(args)
    scenario = io.build_scenario(config)
    pipeline = fit_pipeline(scenario)
    out = _outdir(config)
    io.save_pipeline(out, pipeline)

    print(f"fitted {len(pipeline.posteriors)} marginal model(s)")
    print(f"medoid regions: {', '.join(pipeline.medoid_ids)}")
    if pipeline.cluster is not None and pipeline.cluster.beta is not None:
        c = pipeline.cluster
        print(
            f"clustering: K={c.n_clusters} beta={c.beta} dunn={c.dunn:.4f} "
            f"silhouette={c.silhouette_mean:.4f}"
        )
    if pipeline.model is not None:
        m = pipeline.model
        print(
            f"copula family {m.evolution.family}: loglik={m.copula_loglik:.4f} "
            f"converged={m.converged}"
        )
        print(f"tail model loglik={m.gev_loglik:.4f}")
    else:
        print("single medoid: marginal-only pipeline (no copula stage)")
    print(f"artifacts written to {out}")
    return 0


def cmd_cluster(args) -> int:
    config = _load_config(args)
    scenario = io.build_scenario(config)
    D = scenario.yields.n_regions
    if D < 2:
        raise ConfigError("clustering needs at least 2 regions")

    posteriors = [
        fit_bsts(
            scenario.yields.values[d],
            scenario.covariates.values[d],
            scenario.bsts,
            seed=scenario.seed + d,
        )
        for d in range(D)
    ]
    u_all = rank_uniformize(extract_pseudo_observations(posteriors))
    pair_fits = clus.fit_all_pairs(
        u_all,
        scenario.covariates.cross_max,
        scenario.family,
        settings=scenario.optimizer,
        rng=np.random.default_rng(scenario.seed + 1_000_003),
    )
    copula_m = clus.aggregate_to_divisions(
        clus.pairwise_dissimilarities(pair_fits), D
    )
    spatial_m = clus.spatial_distance_matrix(scenario.yields.regions)

    beta_grid = config.beta_grid or DEFAULT_BETA_GRID
    k_candidates = config.k_candidates or tuple(range(2, D + 1))
    beta, n_clusters, result = clus.select_beta_and_k(
        spatial_m,
        copula_m,
        beta_grid,
        k_candidates,
        rng=np.random.default_rng(scenario.seed),
    )

    out = _outdir(config)
    io.write_cluster_report(
        out / "clustering.json", result, scenario.yields.region_ids
    )
    io.write_pseudo_obs(
        out / "pseudo_obs.csv",
        scenario.yields.region_ids,
        scenario.yields.years,
        u_all,
    )

    medoid_ids = [scenario.yields.region_ids[m] for m in result.medoids]
    print(f"selected K={result.n_clusters} beta={result.beta}")
    print(f"medoid regions: {', '.join(medoid_ids)}")
    print(
        f"dunn={result.dunn:.4f} silhouette={result.silhouette_mean:.4f} "
        f"cost={result.total_cost:.4f}"
    )
    print(f"report written to {out / 'clustering.json'}")
    return 0


def cmd_forecast(args) -> int:
    config = _load_config(args)
    scenario = io.build_scenario(config)
    out = _outdir(config)
    pipeline = io.load_pipeline(out, scenario)
    dist = forecast(pipeline, config.horizon, config.n_paths, rng=config.seed)

    io.write_forecast_paths(out / "forecast_paths.csv", dist)
    io.write_forecast_summary(out / "forecast_summary.json", dist)
    print(
        f"simulated {dist.n_paths} paths over {config.horizon} year(s) for "
        f"{len(dist.region_ids)} region(s)"
    )
    if dist.n_discarded:
        print(f"redrew {dist.n_discarded} non-finite path value(s)")
    print(f"paths written to {out / 'forecast_paths.csv'}")
    print(f"summary written to {out / 'forecast_summary.json'}")
    return 0


def _split_years(scenario: FitScenario, holdout: int):
    """Training scenario plus the held-out tail of the yield panel."""
    yields, cov = scenario.yields, scenario.covariates
    cut = yields.n_years - holdout
    train = dataclasses.replace(
        scenario,
        yields=YieldPanel(
            regions=yields.regions,
            years=yields.years[:cut],
            values=yields.values[:, :cut],
        ),
        covariates=CovariatePanel(
            index_names=cov.index_names,
            years=cov.years[:cut],
            values=cov.values[:, :, :cut],
        ),
    )
    return train, yields.values[:, cut:], yields.years[cut:]


def cmd_compare(args) -> int:
    config = _load_config(args)
    if len(config.families) < 2:
        raise ConfigError(
            "model comparison needs a 'families' list with at least 2 entries "
            f"(got {list(config.families)})"
        )
    scenario = io.build_scenario(config)
    holdout = min(5, scenario.yields.n_years // 5)
    if holdout < 1:
        raise ConfigError(
            f"{scenario.yields.n_years} years is too short to hold out a "
            "validation window"
        )
    train, actual_values, actual_years = _split_years(scenario, holdout)

    posteriors = [
        fit_bsts(
            train.yields.values[d],
            train.covariates.values[d],
            train.bsts,
            seed=train.seed + d,
        )
        for d in range(train.yields.n_regions)
    ]

    entries = []
    for family in config.families:
        pipeline = fit_pipeline(
            dataclasses.replace(train, family=family), posteriors=posteriors
        )
        dist = forecast(pipeline, holdout, config.n_paths, rng=config.seed)
        report = build_report(family, dist, actual_values, actual_years)
        loglik = (
            pipeline.model.copula_loglik if pipeline.model is not None else float("nan")
        )
        entries.append({"family": family, "loglik": loglik, "report": report})

    if config.rank_by == "loglik":
        entries.sort(key=lambda e: -e["loglik"])
    else:
        entries.sort(key=lambda e: e["report"].amse)
    for rank, entry in enumerate(entries, start=1):
        entry["rank"] = rank

    out = _outdir(config)
    region_ids = entries[0]["report"].region_ids
    header = ["family", "rank", "copula_loglik", "amse_pooled"]
    for rid in region_ids:
        header += [f"amse_{rid}", f"amae_{rid}"]
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = io._new_writer(fh)
        w.writerow(header)
        for entry in entries:
            rep = entry["report"]
            row = [
                entry["family"],
                entry["rank"],
                repr(float(entry["loglik"])),
                repr(float(rep.amse)),
            ]
            for i in range(len(region_ids)):
                row += [
                    repr(float(rep.amse_by_region[i])),
                    repr(float(rep.amae_by_region[i])),
                ]
            w.writerow(row)

    print(
        f"held out the last {holdout} year(s); ranking by "
        f"{'copula log-likelihood' if config.rank_by == 'loglik' else 'pooled AMSE'}"
    )
    for entry in entries:
        print(
            f"  {entry['rank']}. {entry['family']:<12} "
            f"loglik={entry['loglik']:.4f} amse={entry['report'].amse:.4f}"
        )
    print(f"table written to {out / 'comparison.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    scenario = io.build_scenario(config)
    out = _outdir(config)
    paths_file = out / "forecast_paths.csv"
    if not paths_file.exists():
        raise ArtifactError(
            f"no forecast paths at {paths_file}; run the forecast command first"
        )
    dist = io.read_forecast_paths(paths_file)
    panel_ids = scenario.yields.region_ids
    unknown = [rid for rid in dist.region_ids if rid not in panel_ids]
    if unknown:
        raise ArtifactError(
            f"forecast region(s) {unknown} are not in the configured data "
            f"{list(panel_ids)}"
        )
    rows = [panel_ids.index(rid) for rid in dist.region_ids]
    year_pos = {int(y): t for t, y in enumerate(scenario.yields.years)}
    missing = [int(y) for y in dist.years if int(y) not in year_pos]
    if missing:
        raise ConfigError(
            f"the yield data has no observations for forecast year(s) {missing}"
        )
    cols = [year_pos[int(y)] for y in dist.years]
    report = build_report(
        config.family,
        dist,
        scenario.yields.values[np.ix_(rows, cols)],
        dist.years,
    )
    io.write_metrics_csv(out / "metrics.csv", [report])
    for model, region, metric, value in report.rows():
        print(f"  {model} {region:<10} {metric} = {value:.6f}")
    print(f"metrics written to {out / 'metrics.csv'}")
    return 0


def cmd_simulate(args) -> int:
    truth_kwargs = {}
    seed = 0
    outdir = None
    if args.config is not None:
        config = _load_config(args)
        seed = config.seed
        outdir = config.outdir
        truth_kwargs = dict(config.simulate or {})
    if args.seed is not None:
        seed = args.seed
    if args.out is not None:
        outdir = args.out
    if outdir is None:
        raise ConfigError("simulate needs an output directory (--out or config)")

    for key, value in truth_kwargs.items():
        if isinstance(value, list):
            truth_kwargs[key] = tuple(value)
    try:
        truth = SyntheticTruth(**truth_kwargs)
    except TypeError as err:
        raise ConfigError(f"bad 'simulate' section: {err}") from None

    yields, covariates, record = generate_synthetic(
        truth, rng=np.random.default_rng(seed)
    )
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_regions_csv(out / "regions.csv", yields.regions)
    io.write_yield_csv(out / "yields.csv", yields)
    io.write_covariate_csv(out / "covariates.csv", covariates, yields.region_ids)
    io.write_json(
        {
            "format_version": io.FORMAT_VERSION,
            "seed": seed,
            "truth": {
                k: list(v) if isinstance(v, tuple) else v
                for k, v in dataclasses.asdict(truth).items()
            },
        },
        out / "truth.json",
    )
    print(
        f"simulated {yields.n_regions} regions x {yields.n_years} years "
        f"({covariates.n_indices} climate index(es), family {truth.family})"
    )
    print(f"data written to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as err:
        print(f"cropcast: {err}", file=sys.stderr)
        return 2
    except ArtifactError as err:
        print(f"cropcast: {err}", file=sys.stderr)
        return 4
    except NumericError as err:
        print(f"cropcast: {err}", file=sys.stderr)
        return 3
    except CropcastError as err:
        print(f"cropcast: {err}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as err:
        print(f"cropcast: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"cropcast: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
