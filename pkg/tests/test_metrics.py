"""Forecast-error metrics and covariate-screening diagnostics.

Oracles are hand arithmetic on tiny error arrays (errors of 1 and 3 give a
pooled squared error of (1 + 9)/2 = 5) plus brute-force recomputations of
every mean from the definitions.
"""

import numpy as np
import pytest

from cropcast.forecast import ForecastDistribution, path_summaries
from cropcast.metrics import (
    MetricReport,
    amse_pooled,
    build_report,
    per_region_metrics,
    screen_covariates,
)
from cropcast.panels import CovariatePanel


def _dist(paths, start_year=2001):
    paths = np.asarray(paths, dtype=float)
    D, T, _ = paths.shape
    years = np.arange(start_year, start_year + T)
    mean, (lo, hi) = path_summaries(paths)
    return ForecastDistribution(
        region_ids=tuple(f"R{d:02d}" for d in range(D)),
        years=years, paths=paths, mean=mean, q025=lo, q975=hi,
    )


def _panel(values, start_year=2001):
    values = np.asarray(values, dtype=float)
    years = np.arange(start_year, start_year + values.shape[2])
    names = tuple(f"idx{m}" for m in range(values.shape[1]))
    return CovariatePanel(index_names=names, years=years, values=values)


# ---------------------------------------------------------------------------
# error metrics


def test_amse_hand_case():
    actual = np.array([[10.0], [20.0]])
    paths = np.array([[[11.0]], [[23.0]]])  # errors 1 and 3
    dist = _dist(paths)
    assert amse_pooled(dist, actual, dist.years) == 5.0
    amse_d, amae_d = per_region_metrics(dist, actual, dist.years)
    np.testing.assert_array_equal(amse_d, [1.0, 9.0])
    np.testing.assert_array_equal(amae_d, [1.0, 3.0])


def test_perfect_forecast_scores_zero():
    actual = np.arange(6.0).reshape(2, 3)
    paths = np.repeat(actual[:, :, None], 5, axis=2)
    dist = _dist(paths)
    assert amse_pooled(dist, actual, dist.years) == 0.0
    amse_d, amae_d = per_region_metrics(dist, actual, dist.years)
    np.testing.assert_array_equal(amse_d, [0.0, 0.0])
    np.testing.assert_array_equal(amae_d, [0.0, 0.0])


def test_constant_offset_scores_its_square():
    actual = np.zeros((2, 4))
    paths = np.full((2, 4, 10), -2.5)
    dist = _dist(paths)
    assert amse_pooled(dist, actual, dist.years) == 6.25
    amse_d, amae_d = per_region_metrics(dist, actual, dist.years)
    np.testing.assert_array_equal(amse_d, [6.25, 6.25])
    np.testing.assert_array_equal(amae_d, [2.5, 2.5])


def test_metrics_match_explicit_loops():
    rng = np.random.default_rng(0)
    paths = rng.normal(size=(2, 4, 50))
    actual = rng.normal(size=(2, 4))
    dist = _dist(paths)
    sq = 0.0
    for d in range(2):
        for t in range(4):
            for p in range(50):
                sq += (paths[d, t, p] - actual[d, t]) ** 2
    assert amse_pooled(dist, actual, dist.years) == pytest.approx(
        sq / 400, abs=1e-12
    )
    amse_d, amae_d = per_region_metrics(dist, actual, dist.years)
    for d in range(2):
        err = paths[d] - actual[d][:, None]
        assert amse_d[d] == pytest.approx(np.mean(err**2), abs=1e-12)
        assert amae_d[d] == pytest.approx(np.mean(np.abs(err)), abs=1e-12)
    # pooled error is the equal-weight average of the per-region errors
    assert amse_pooled(dist, actual, dist.years) == pytest.approx(
        amse_d.mean(), abs=1e-12
    )


def test_metrics_ignore_path_order():
    rng = np.random.default_rng(1)
    paths = rng.normal(size=(2, 3, 40))
    actual = rng.normal(size=(2, 3))
    a = _dist(paths)
    b = _dist(rng.permuted(paths, axis=-1))
    assert amse_pooled(a, actual, a.years) == pytest.approx(
        amse_pooled(b, actual, b.years), abs=1e-12
    )


def test_metrics_alignment_errors():
    dist = _dist(np.zeros((2, 3, 5)))
    actual = np.zeros((2, 3))
    with pytest.raises(ValueError, match="align"):
        amse_pooled(dist, actual, dist.years + 1)
    with pytest.raises(ValueError, match="regions"):
        amse_pooled(dist, np.zeros((3, 3)), dist.years)
    with pytest.raises(ValueError, match="\\(D, T\\)"):
        amse_pooled(dist, np.zeros(3), dist.years)
    with pytest.raises(ValueError, match="align"):
        amse_pooled(dist, np.zeros((2, 4)), np.arange(2001, 2005))
    single = _dist(np.zeros((1, 3, 5)))
    with pytest.raises(ValueError, match="exactly 2"):
        amse_pooled(single, np.zeros((1, 3)), single.years)


def test_report_rows_and_invariants():
    rng = np.random.default_rng(2)
    paths = rng.normal(size=(2, 3, 20))
    actual = rng.normal(size=(2, 3))
    dist = _dist(paths)
    report = build_report("gumbel", dist, actual, dist.years)
    assert report.label == "gumbel"
    assert report.n_paths == 20 and report.horizon == 3
    assert report.amse == pytest.approx(amse_pooled(dist, actual, dist.years))
    rows = report.rows()
    assert rows[0] == ("gumbel", "pooled", "amse", report.amse)
    assert len(rows) == 1 + 2 * 2
    assert {r[2] for r in rows[1:]} == {"amse", "amae"}
    # a single-region report pools by averaging the per-region errors
    single = _dist(paths[:1])
    rep1 = build_report("solo", single, actual[:1], single.years)
    assert rep1.amse == pytest.approx(rep1.amse_by_region.mean())


def test_report_rejects_inconsistent_metrics():
    common = dict(label="x", region_ids=("a",), n_paths=5, horizon=1)
    with pytest.raises(ValueError, match="negative"):
        MetricReport(amse=-1.0, amse_by_region=[1.0], amae_by_region=[0.5],
                     **common)
    # mean absolute error can never exceed root mean squared error
    with pytest.raises(ValueError, match="exceeds"):
        MetricReport(amse=1.0, amse_by_region=[1.0], amae_by_region=[1.5],
                     **common)


# ---------------------------------------------------------------------------
# covariate screening


def test_screening_self_dependence_is_perfect():
    rng = np.random.default_rng(3)
    base = rng.normal(size=(2, 1, 500))
    # second index is a monotone transform of the first: identical ranks
    vals = np.concatenate([base, 2.0 * base + 3.0], axis=1)
    out = screen_covariates(_panel(vals))
    np.testing.assert_allclose(np.diag(out["correlation"]), [1.0, 1.0])
    assert out["correlation"][0, 1] == pytest.approx(1.0, abs=1e-12)
    # 1000 pooled values: exactly 10 ranks exceed the 0.99 threshold
    np.testing.assert_allclose(out["lambda_upper"], np.ones((2, 2)))
    np.testing.assert_allclose(out["lambda_lower"], np.ones((2, 2)))
    np.testing.assert_array_equal(out["index_names"], ["idx0", "idx1"])


def test_screening_independent_indices():
    rng = np.random.default_rng(4)
    vals = rng.normal(size=(2, 2, 5000))
    out = screen_covariates(_panel(vals))
    assert abs(out["correlation"][0, 1]) < 0.05
    assert out["lambda_upper"][0, 1] < 0.2
    assert out["lambda_lower"][0, 1] < 0.2
    np.testing.assert_allclose(out["lambda_upper"], out["lambda_upper"].T)
    # correlation matrices are positive semidefinite up to rounding
    assert np.linalg.eigvalsh(out["correlation"]).min() > -1e-10


def test_screening_constant_column_is_flagged():
    rng = np.random.default_rng(5)
    vals = rng.normal(size=(2, 3, 100))
    vals[:, 1, :] = 7.0
    out = screen_covariates(_panel(vals))
    corr = out["correlation"]
    assert np.all(np.isnan(corr[1, :])) and np.all(np.isnan(corr[:, 1]))
    assert np.isfinite(corr[0, 2])
    assert np.isfinite(corr[0, 0])


def test_screening_short_window_warns():
    rng = np.random.default_rng(6)
    vals = rng.normal(size=(2, 1, 20))
    with pytest.warns(UserWarning, match="unstable"):
        screen_covariates(_panel(vals))


def test_screening_threshold_validation():
    rng = np.random.default_rng(7)
    panel = _panel(rng.normal(size=(2, 1, 100)))
    with pytest.raises(ValueError):
        screen_covariates(panel, upper_q=0.4)
    with pytest.raises(ValueError):
        screen_covariates(panel, lower_q=0.6)
