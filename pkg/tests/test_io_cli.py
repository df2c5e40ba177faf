"""CSV schemas, run configuration, pipeline persistence, and the command
line.

Persistence is checked round-trip: floats are serialized with ``repr`` so
every written file must re-ingest to the exact in-memory values, and a
rerun under the same seed must reproduce output files byte for byte.
CLI commands are exercised in-process through ``main`` with small sampler
budgets.
"""

import dataclasses
import json
from types import SimpleNamespace

import numpy as np
import pytest

from cropcast import io
from cropcast.cli import main
from cropcast.errors import ArtifactError, ConfigError
from cropcast.forecast import (
    ForecastDistribution,
    SyntheticTruth,
    forecast,
    generate_synthetic,
    path_summaries,
)
from cropcast.panels import CovariatePanel, RegionMeta, YieldPanel


def _write(path, text):
    path.write_text(text, encoding="utf-8")


def _regions(n=2):
    return [
        RegionMeta(f"R{d:02d}", f"region-{d:02d}", 43.0 + 0.8 * d, -81.0 + 0.2 * d)
        for d in range(n)
    ]


# ---------------------------------------------------------------------------
# CSV round trips


def test_regions_csv_round_trip(tmp_path):
    path = tmp_path / "regions.csv"
    regions = _regions(3)
    io.write_regions_csv(path, regions)
    assert io.read_regions_csv(path) == regions
    first = path.read_bytes()
    io.write_regions_csv(path, io.read_regions_csv(path))
    assert path.read_bytes() == first


def test_yield_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    regions = _regions(2)
    panel = YieldPanel(
        regions=tuple(regions),
        years=np.arange(2000, 2010),
        values=rng.normal(50.0, 5.0, size=(2, 10)),
    )
    path = tmp_path / "yields.csv"
    io.write_yield_csv(path, panel)
    back = io.read_yield_csv(path, regions)
    np.testing.assert_array_equal(back.values, panel.values)
    np.testing.assert_array_equal(back.years, panel.years)
    assert back.region_ids == panel.region_ids
    first = path.read_bytes()
    io.write_yield_csv(path, back)
    assert path.read_bytes() == first


def test_covariate_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    regions = _regions(2)
    panel = CovariatePanel(
        index_names=("heat", "drought"),
        years=np.arange(2000, 2008),
        values=rng.normal(size=(2, 2, 8)),
    )
    path = tmp_path / "covariates.csv"
    io.write_covariate_csv(path, panel, [r.region_id for r in regions])
    back = io.read_covariate_csv(path, regions)
    assert back.index_names == ("heat", "drought")
    np.testing.assert_array_equal(back.values, panel.values)
    np.testing.assert_array_equal(back.cross_max, panel.cross_max)


def test_forecast_paths_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    paths = rng.normal(size=(2, 3, 10))
    mean, (lo, hi) = path_summaries(paths)
    dist = ForecastDistribution(
        region_ids=("R00", "R01"), years=np.arange(2020, 2023),
        paths=paths, mean=mean, q025=lo, q975=hi,
    )
    path = tmp_path / "forecast_paths.csv"
    io.write_forecast_paths(path, dist)
    back = io.read_forecast_paths(path)
    assert back.region_ids == dist.region_ids
    np.testing.assert_array_equal(back.years, dist.years)
    np.testing.assert_array_equal(back.paths, dist.paths)
    first = path.read_bytes()
    io.write_forecast_paths(path, back)
    assert path.read_bytes() == first


def test_yield_csv_malformed_inputs(tmp_path):
    regions = _regions(2)
    p = tmp_path / "bad.csv"

    _write(p, "region,year,yield\nR00,2000,1.0\n")
    with pytest.raises(ArtifactError, match="expected header"):
        io.read_yield_csv(p, regions)

    _write(p, "region_id,year,yield\nR00,2000,abc\n")
    with pytest.raises(ArtifactError, match=r"bad\.csv:2: 'abc' is not a number"):
        io.read_yield_csv(p, regions)

    _write(p, "region_id,year,yield\nR00,2000,1.0\nR00,2000,2.0\n")
    with pytest.raises(ArtifactError, match="duplicate entry"):
        io.read_yield_csv(p, regions)

    _write(p, "region_id,year,yield\nR99,2000,1.0\n")
    with pytest.raises(ArtifactError, match="'R99' is not in the region table"):
        io.read_yield_csv(p, regions)

    # R01 never reports 2001: the dense panel cannot be assembled
    _write(
        p,
        "region_id,year,yield\n"
        "R00,2000,1.0\nR00,2001,2.0\nR01,2000,3.0\n",
    )
    with pytest.raises(ArtifactError, match="no yield for region 'R01'"):
        io.read_yield_csv(p, regions)

    _write(p, "region_id,year,yield\nR00,2000\n")
    with pytest.raises(ArtifactError, match="expected 3 fields"):
        io.read_yield_csv(p, regions)

    _write(p, "")
    with pytest.raises(ArtifactError, match="empty"):
        io.read_yield_csv(p, regions)


def test_regions_csv_malformed_inputs(tmp_path):
    p = tmp_path / "regions.csv"
    _write(
        p,
        "region_id,name,latitude,longitude\n"
        "R00,a,43.0,-81.0\nR00,b,44.0,-80.0\n",
    )
    with pytest.raises(ArtifactError, match="duplicate region_id"):
        io.read_regions_csv(p)
    _write(p, "region_id,name,latitude,longitude\n")
    with pytest.raises(ArtifactError, match="no regions"):
        io.read_regions_csv(p)


def test_forecast_paths_malformed_inputs(tmp_path):
    p = tmp_path / "paths.csv"
    _write(
        p,
        "region,year,path_id,value\n"
        "R00,2020,0,1.0\nR00,2020,0,2.0\n",
    )
    with pytest.raises(ArtifactError, match="duplicate path"):
        io.read_forecast_paths(p)
    # path 1 exists for 2020 but not 2021
    _write(
        p,
        "region,year,path_id,value\n"
        "R00,2020,0,1.0\nR00,2020,1,2.0\nR00,2021,0,3.0\n",
    )
    with pytest.raises(ArtifactError, match="missing value"):
        io.read_forecast_paths(p)


# ---------------------------------------------------------------------------
# run configuration


def test_config_defaults(tmp_path):
    p = tmp_path / "config.json"
    _write(p, "{}")
    cfg = io.load_config(p)
    assert cfg.family == "gumbel"
    assert cfg.horizon == 10 and cfg.n_paths == 1000
    assert cfg.seed == 0 and cfg.outdir == "out"
    assert cfg.yields_path is None
    assert cfg.rank_by == "loglik"


def test_config_precedence(tmp_path, monkeypatch):
    p = tmp_path / "config.json"
    _write(p, json.dumps({"seed": 5, "outdir": "from_file"}))
    assert io.load_config(p).seed == 5
    monkeypatch.setenv(io.ENV_SEED, "9")
    monkeypatch.setenv(io.ENV_OUTDIR, "from_env")
    cfg = io.load_config(p)
    assert cfg.seed == 9
    assert cfg.outdir == "from_env"
    cfg = io.load_config(p, overrides={"seed": 3, "outdir": "from_flag"})
    assert cfg.seed == 3
    assert cfg.outdir == "from_flag"


def test_config_relative_paths_resolve_against_file(tmp_path):
    sub = tmp_path / "sub"
    sub.mkdir()
    p = sub / "config.json"
    _write(p, json.dumps({"data": {"yields": "data/y.csv"}}))
    cfg = io.load_config(p)
    assert cfg.yields_path == str(sub / "data" / "y.csv")
    _write(p, json.dumps({"data": {"yields": "/abs/y.csv"}}))
    assert io.load_config(p).yields_path == "/abs/y.csv"


def test_config_rejects_bad_documents(tmp_path):
    p = tmp_path / "config.json"
    _write(p, "{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        io.load_config(p)
    _write(p, "[1, 2]")
    with pytest.raises(ConfigError, match="top level"):
        io.load_config(p)
    _write(p, json.dumps({"seeed": 1}))
    with pytest.raises(ConfigError, match="seeed"):
        io.load_config(p)
    _write(p, json.dumps({"forecast": [1]}))
    with pytest.raises(ConfigError, match="must be an object"):
        io.load_config(p)
    _write(p, json.dumps({"clustering": {"betas": [0.5]}}))
    with pytest.raises(ConfigError, match="unknown keys"):
        io.load_config(p)
    _write(p, json.dumps({"bsts": {"n_iter": 10, "burn_in": 20}}))
    with pytest.raises(ConfigError, match="n_iter"):
        io.load_config(p)


def test_config_validates_values(tmp_path):
    p = tmp_path / "config.json"
    cases = [
        ({"family": "pareto"}, "unknown copula family"),
        ({"families": "clayton"}, "must be a list"),
        ({"clustering": {"beta_grid": [0.5, 1.5]}}, "beta_grid"),
        ({"clustering": {"beta_grid": []}}, "beta_grid"),
        ({"clustering": {"k_candidates": [0]}}, "k_candidates"),
        ({"compare": {"rank_by": "bic"}}, "rank_by"),
        ({"forecast": {"horizon": 0}}, "horizon"),
        ({"forecast": {"n_paths": 0}}, "paths"),
        ({"threads": 0}, "threads"),
        ({"n_clusters": 0}, "n_clusters"),
        ({"seed": "abc"}, "seed"),
    ]
    for doc, needle in cases:
        _write(p, json.dumps(doc))
        with pytest.raises(ConfigError, match=needle):
            io.load_config(p)
    _write(p, "{}")
    with pytest.raises(ConfigError, match="unknown override"):
        io.load_config(p, overrides={"bogus": 1})
    # the valid-family message lists every known family
    _write(p, json.dumps({"family": "pareto"}))
    with pytest.raises(ConfigError, match="clayton.*independence"):
        io.load_config(p)


def test_build_scenario_names_missing_files(tmp_path):
    p = tmp_path / "config.json"
    _write(p, "{}")
    with pytest.raises(ConfigError, match="data.regions"):
        io.build_scenario(io.load_config(p))
    _write(
        p,
        json.dumps({"data": {
            "regions": "r.csv", "yields": "y.csv", "covariates": "c.csv"
        }}),
    )
    with pytest.raises(ConfigError, match="r\\.csv"):
        io.build_scenario(io.load_config(p))


# ---------------------------------------------------------------------------
# pipeline persistence


def test_pipeline_save_load_round_trip(tmp_path, small_pipeline, small_scenario):
    out = tmp_path / "artifacts"
    io.save_pipeline(out, small_pipeline)
    back = io.load_pipeline(out, small_scenario)

    assert back.medoid_ids == small_pipeline.medoid_ids
    assert back.medoid_indices == small_pipeline.medoid_indices
    np.testing.assert_array_equal(back.pseudo_obs, small_pipeline.pseudo_obs)
    for a, b in zip(back.posteriors, small_pipeline.posteriors):
        np.testing.assert_array_equal(a.psi, b.psi)
        np.testing.assert_array_equal(a.variances, b.variances)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.residuals, b.residuals)
        assert a.config == b.config
    np.testing.assert_array_equal(back.model.thetas, small_pipeline.model.thetas)
    assert back.model.evolution == small_pipeline.model.evolution
    assert back.model.copula_loglik == small_pipeline.model.copula_loglik
    for row_a, row_b in zip(back.gev_fits, small_pipeline.gev_fits):
        for fa, fb in zip(row_a, row_b):
            assert (fa.phi, fa.sigma_mu, fa.sigma, fa.xi) == (
                fb.phi, fb.sigma_mu, fb.sigma, fb.xi
            )
            np.testing.assert_array_equal(fa.mu_path, fb.mu_path)
    assert back.cluster.medoids == small_pipeline.cluster.medoids

    # a reloaded pipeline forecasts identically under the same seed
    a = forecast(small_pipeline, 3, 40, rng=np.random.default_rng(5))
    b = forecast(back, 3, 40, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a.paths, b.paths)


def test_pipeline_load_guards(tmp_path, small_pipeline, small_scenario):
    with pytest.raises(ArtifactError, match="no pipeline artifacts"):
        io.load_pipeline(tmp_path / "nothing", small_scenario)

    out = tmp_path / "artifacts"
    io.save_pipeline(out, small_pipeline)

    wrong_family = dataclasses.replace(small_scenario, family="gumbel")
    with pytest.raises(ArtifactError, match="family"):
        io.load_pipeline(out, wrong_family)

    manifest = json.loads((out / "manifest.json").read_text())
    manifest["format_version"] = 99
    io.write_json(manifest, out / "manifest.json")
    with pytest.raises(ArtifactError, match="refusing to load"):
        io.load_pipeline(out, small_scenario)
    manifest["format_version"] = io.FORMAT_VERSION
    io.write_json(manifest, out / "manifest.json")

    (out / "bsts" / f"{small_pipeline.medoid_ids[0]}.npz").unlink()
    with pytest.raises(ArtifactError, match="missing artifact"):
        io.load_pipeline(out, small_scenario)


# ---------------------------------------------------------------------------
# command line


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """simulate -> fit -> forecast flow shared by the artifact tests."""
    root = tmp_path_factory.mktemp("cli")
    truth = SyntheticTruth(n_years=54)
    yp, cp, _ = generate_synthetic(truth, rng=np.random.default_rng(21))

    full = root / "full"
    full.mkdir()
    io.write_regions_csv(full / "regions.csv", yp.regions)
    io.write_yield_csv(full / "yields.csv", yp)
    io.write_covariate_csv(full / "covariates.csv", cp, yp.region_ids)

    train = root / "train"
    train.mkdir()
    cut = 50
    io.write_regions_csv(train / "regions.csv", yp.regions)
    io.write_yield_csv(
        train / "yields.csv",
        YieldPanel(regions=yp.regions, years=yp.years[:cut],
                   values=yp.values[:, :cut]),
    )
    io.write_covariate_csv(
        train / "covariates.csv",
        CovariatePanel(index_names=cp.index_names, years=cp.years[:cut],
                       values=cp.values[:, :, :cut]),
        yp.region_ids,
    )

    base = {
        "family": "clayton",
        "families": ["clayton", "independence"],
        "seed": 11,
        "outdir": str(root / "out"),
        "n_clusters": 2,
        "bsts": {"n_iter": 600, "burn_in": 150},
        "optimizer": {"max_evals": 800, "restarts": 1},
        "forecast": {"horizon": 4, "n_paths": 50},
    }
    cfg = root / "config.json"
    _write(cfg, json.dumps({**base, "data": {
        "regions": "train/regions.csv",
        "yields": "train/yields.csv",
        "covariates": "train/covariates.csv",
    }}))
    cfg_eval = root / "config_eval.json"
    _write(cfg_eval, json.dumps({**base, "data": {
        "regions": "full/regions.csv",
        "yields": "full/yields.csv",
        "covariates": "full/covariates.csv",
    }}))

    assert main(["fit", "--config", str(cfg)]) == 0
    assert main(["forecast", "--config", str(cfg)]) == 0
    return SimpleNamespace(root=root, cfg=cfg, cfg_eval=cfg_eval,
                           out=root / "out")


def test_cli_fit_writes_artifacts(cli_run):
    out = cli_run.out
    assert (out / "manifest.json").exists()
    assert (out / "copula.json").exists()
    assert (out / "gev.json").exists()
    assert (out / "pseudo_obs.csv").exists()
    assert sorted(p.name for p in (out / "bsts").iterdir()) == [
        "R00.npz", "R01.npz"
    ]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["format_version"] == io.FORMAT_VERSION
    assert manifest["family"] == "clayton"
    assert manifest["medoid_ids"] == ["R00", "R01"]


def test_cli_forecast_output_shape(cli_run):
    lines = (cli_run.out / "forecast_paths.csv").read_text().splitlines()
    assert lines[0] == "region,year,path_id,value"
    assert len(lines) == 1 + 2 * 4 * 50
    summary = json.loads((cli_run.out / "forecast_summary.json").read_text())
    assert summary["years"] == [1950, 1951, 1952, 1953]
    assert summary["n_paths"] == 50
    assert set(summary["regions"]) == {"R00", "R01"}


def test_cli_forecast_is_byte_reproducible(cli_run):
    path = cli_run.out / "forecast_paths.csv"
    first = path.read_bytes()
    assert main(["forecast", "--config", str(cli_run.cfg)]) == 0
    assert path.read_bytes() == first


def test_cli_evaluate_scores_forecasts(cli_run):
    assert main(["evaluate", "--config", str(cli_run.cfg_eval)]) == 0
    lines = (cli_run.out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "model,region,metric,value"
    assert len(lines) == 1 + 1 + 2 * 2  # pooled + two regions x two metrics
    assert lines[1].startswith("clayton,pooled,amse,")


def test_cli_compare_ranks_families(cli_run):
    assert main(["compare", "--config", str(cli_run.cfg)]) == 0
    lines = (cli_run.out / "comparison.csv").read_text().splitlines()
    assert lines[0].startswith("family,rank,copula_loglik,amse_pooled")
    assert len(lines) == 3
    rows = [line.split(",") for line in lines[1:]]
    assert [r[1] for r in rows] == ["1", "2"]
    assert float(rows[0][2]) >= float(rows[1][2])  # ranked by log-likelihood


def test_cli_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", "--out", str(d), "--seed", "3"]) == 0
    for name in ("regions.csv", "yields.csv", "covariates.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    truth = json.loads((a / "truth.json").read_text())
    assert truth["seed"] == 3
    assert truth["truth"]["family"] == "clayton"


def test_cli_simulate_honors_config_section(tmp_path):
    cfg = tmp_path / "config.json"
    _write(cfg, json.dumps({
        "outdir": str(tmp_path / "sim"),
        "seed": 4,
        "simulate": {"n_years": 40, "family": "gumbel"},
    }))
    assert main(["simulate", "--config", str(cfg)]) == 0
    lines = (tmp_path / "sim" / "yields.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 40
    truth = json.loads((tmp_path / "sim" / "truth.json").read_text())
    assert truth["truth"]["family"] == "gumbel"
    assert truth["truth"]["n_years"] == 40


def test_cli_error_exit_codes(cli_run, tmp_path, capsys):
    # configuration problems exit 2
    assert main(["fit", "--config", str(cli_run.cfg), "--family", "pareto"]) == 2
    assert "unknown copula family" in capsys.readouterr().err
    assert main(["forecast", "--config", str(cli_run.cfg), "--horizon", "0"]) == 2
    assert main(["fit"]) == 2
    assert "requires --config" in capsys.readouterr().err
    assert main(["simulate", "--seed", "1"]) == 2

    bad = tmp_path / "bad.json"
    _write(bad, json.dumps({
        "data": {
            "regions": str(cli_run.root / "train" / "regions.csv"),
            "yields": str(cli_run.root / "train" / "yields.csv"),
            "covariates": str(tmp_path / "nope.csv"),
        },
    }))
    assert main(["fit", "--config", str(bad)]) == 2
    assert "nope.csv" in capsys.readouterr().err

    few = tmp_path / "few.json"
    _write(few, json.dumps({
        "data": {
            "regions": str(cli_run.root / "train" / "regions.csv"),
            "yields": str(cli_run.root / "train" / "yields.csv"),
            "covariates": str(cli_run.root / "train" / "covariates.csv"),
        },
        "families": ["clayton"],
    }))
    assert main(["compare", "--config", str(few)]) == 2
    assert "at least 2" in capsys.readouterr().err

    # artifact problems exit 4
    empty_out = tmp_path / "empty_out"
    fresh = tmp_path / "fresh.json"
    _write(fresh, json.dumps({
        "data": {
            "regions": str(cli_run.root / "train" / "regions.csv"),
            "yields": str(cli_run.root / "train" / "yields.csv"),
            "covariates": str(cli_run.root / "train" / "covariates.csv"),
        },
        "family": "clayton",
        "outdir": str(empty_out),
    }))
    assert main(["forecast", "--config", str(fresh)]) == 4
    assert "no pipeline artifacts" in capsys.readouterr().err
    assert main(["evaluate", "--config", str(fresh)]) == 4
    assert "run the forecast command first" in capsys.readouterr().err


def test_cli_rejects_tampered_artifact_version(cli_run, tmp_path, capsys):
    out = tmp_path / "out_copy"
    import shutil

    shutil.copytree(cli_run.out, out)
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["format_version"] = 99
    io.write_json(manifest, out / "manifest.json")
    assert main([
        "forecast", "--config", str(cli_run.cfg), "--out", str(out)
    ]) == 4
    assert "refusing to load" in capsys.readouterr().err
