"""Extreme-value density/CDF/quantile kernels, the AR(1) location model,
and the dynamic fit.

Hand values: the GEV log density at z = mu with sigma = 1 is -1 for every
shape (the normalizing and exponent terms collapse); the Gaussian transition
log density at one unit innovation with unit variance is
-(log(2 pi) + 1)/2 = -1.4189385332046727.  Distributional checks use
scipy.stats.genextreme (its shape c equals -xi) as the independent oracle.
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from cropcast.errors import FitError, SupportError
from cropcast.gev import (
    GevDynamicFit,
    _mu_objective_pieces,
    ar1_location_logpdf,
    dynamic_gev_loglik,
    fit_dynamic_gev,
    gev_cdf,
    gev_logpdf,
    gev_quantile,
    simulate_gev_step,
)
from cropcast.panels import OptimizerSettings


def simulate_series(seed, T, phi, sig_mu, sigma, xi):
    rng = np.random.default_rng(seed)
    mu = 0.0
    z = np.empty(T)
    for t in range(T):
        mu = phi * mu + rng.normal(0, sig_mu)
        u = rng.uniform(1e-12, 1 - 1e-12)
        z[t] = gev_quantile(u, mu, sigma, xi)
    return z


# ---------------------------------------------------------------------------
# density / cdf / quantile


def test_logpdf_hand_value():
    assert gev_logpdf(0.0, 0.0, 1.0, 1.0) == pytest.approx(-1.0, abs=1e-14)
    assert gev_logpdf(0.0, 0.0, 1.0, 0.0) == pytest.approx(-1.0, abs=1e-14)


def test_logpdf_matches_scipy():
    rng = np.random.default_rng(0)
    for xi in (-0.3, -0.05, 0.0, 0.2, 0.8):
        mu, sigma = 2.0, 1.5
        z = stats.genextreme.rvs(-xi, loc=mu, scale=sigma, size=50, random_state=rng)
        expect = stats.genextreme.logpdf(z, -xi, loc=mu, scale=sigma)
        np.testing.assert_allclose(gev_logpdf(z, mu, sigma, xi), expect, rtol=1e-10)


def test_small_shape_agrees_with_gumbel_limit():
    def gumbel_logpdf(z):
        return -z - math.exp(-z)

    for z in (0.0, 1.0, -0.5):
        assert gev_logpdf(z, 0.0, 1.0, 1e-3) == pytest.approx(
            gumbel_logpdf(z), abs=1e-3
        )
        assert gev_logpdf(z, 0.0, 1.0, 1e-6) == pytest.approx(
            gumbel_logpdf(z), abs=1e-6
        )


def test_out_of_support_raises():
    # xi = -0.5 puts the upper endpoint at mu + sigma/|xi| = 2
    with pytest.raises(SupportError):
        gev_logpdf(2.5, 0.0, 1.0, -0.5)
    with pytest.raises(SupportError):
        gev_logpdf(-3.0, 0.0, 1.0, 0.5)  # lower endpoint at -2
    with pytest.raises(ValueError):
        gev_logpdf(0.0, 0.0, -1.0, 0.1)


def test_cdf_saturates_outside_support():
    assert gev_cdf(-3.0, 0.0, 1.0, 0.5) == 0.0
    assert gev_cdf(2.5, 0.0, 1.0, -0.5) == 1.0


@pytest.mark.parametrize("sigma", (0.5, 1.0, 2.0))
@pytest.mark.parametrize("xi", (-0.3, -1e-9, 0.3))
def test_density_integrates_to_one(sigma, xi):
    def dens(z):
        return math.exp(gev_logpdf(z, 0.0, sigma, xi))

    # piecewise between quantiles: a single pass over the whole support
    # loses accuracy in the stretched upper tail for positive shapes
    knots = [
        float(gev_quantile(u, 0.0, sigma, xi))
        for u in (1e-14, 0.01, 0.5, 0.99, 1.0 - 1e-14)
    ]
    val = sum(
        integrate.quad(dens, a, b, limit=400)[0]
        for a, b in zip(knots[:-1], knots[1:])
    )
    assert val == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("xi", (-0.4, 0.0, 0.1, 0.7))
def test_quantile_inverts_cdf(xi):
    u = np.arange(0.01, 1.0, 0.01)
    z = gev_quantile(u, 1.0, 2.0, xi)
    np.testing.assert_allclose(gev_cdf(z, 1.0, 2.0, xi), u, atol=1e-10)


def test_quantile_rejects_boundary_levels():
    with pytest.raises(ValueError):
        gev_quantile(0.0, 0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        gev_quantile(1.0, 0.0, 1.0, 0.1)


# ---------------------------------------------------------------------------
# AR(1) location transitions


def test_ar1_logpdf_hand_values():
    # at the conditional mode the density is the normalizing constant alone
    assert ar1_location_logpdf(0.8 * 2.0, 2.0, 0.8, 0.7) == pytest.approx(
        -math.log(math.sqrt(2.0 * math.pi) * 0.7)
    )
    assert ar1_location_logpdf(1.0, 5.0, 0.0, 1.0) == pytest.approx(
        -1.4189385332046727, abs=1e-15
    )


def test_ar1_logpdf_matches_direct_formula():
    rng = np.random.default_rng(1)
    mu_t, mu_prev = rng.normal(size=(2, 30))
    phi, sig = 0.6, 1.3
    expect = stats.norm.logpdf(mu_t, loc=phi * mu_prev, scale=sig)
    np.testing.assert_allclose(
        ar1_location_logpdf(mu_t, mu_prev, phi, sig), expect, atol=1e-12
    )
    with pytest.raises(ValueError):
        ar1_location_logpdf(0.0, 0.0, 0.5, 0.0)


def test_dynamic_loglik_is_sum_of_blocks():
    rng = np.random.default_rng(2)
    T = 25
    mu_path = np.cumsum(rng.normal(size=T)) * 0.3
    z = mu_path + stats.gumbel_r.rvs(size=T, random_state=rng)
    phi, sig_mu, sigma, xi = 0.5, 0.4, 1.0, 0.05
    expect = float(np.sum(gev_logpdf(z, mu_path, sigma, xi))) + float(
        np.sum(ar1_location_logpdf(mu_path[1:], mu_path[:-1], phi, sig_mu))
    )
    got = dynamic_gev_loglik(z, mu_path, phi, sig_mu, sigma, xi)
    assert got == pytest.approx(expect, abs=1e-10)
    with pytest.raises(ValueError):
        dynamic_gev_loglik(z, mu_path[:-1], phi, sig_mu, sigma, xi)


@pytest.mark.parametrize("xi", (0.0, 0.2))
def test_path_gradient_matches_finite_differences(xi):
    rng = np.random.default_rng(3)
    T = 12
    z = stats.gumbel_r.rvs(loc=1.0, scale=1.2, size=T, random_state=rng)
    mu = z - 0.6 + 0.1 * rng.normal(size=T)
    args = (0.5, 0.8, 1.2, xi)
    negll, grad, _ = _mu_objective_pieces(z, mu, *args)
    assert np.isfinite(negll)
    h = 1e-6
    for t in range(T):
        step = np.zeros(T)
        step[t] = h
        up, _, _ = _mu_objective_pieces(z, mu + step, *args)
        dn, _, _ = _mu_objective_pieces(z, mu - step, *args)
        fd = (up - dn) / (2.0 * h)
        assert grad[t] == pytest.approx(fd, rel=1e-5, abs=1e-7)


# ---------------------------------------------------------------------------
# fitting


def test_fit_recovers_static_parameters():
    rng = np.random.default_rng(11)
    z = gev_quantile(rng.uniform(1e-12, 1 - 1e-12, 500), 10.0, 2.0, 0.1)
    fit = fit_dynamic_gev(z)
    assert abs(fit.sigma / 2.0 - 1.0) < 0.10
    assert abs(fit.xi - 0.1) < 0.1
    assert fit.mu_path.shape == (500,)
    assert float(np.mean(fit.mu_path)) == pytest.approx(10.0, abs=1.0)
    assert fit.converged
    assert np.isfinite(fit.loglik)


def test_fit_recovers_autoregressive_location():
    z = simulate_series(3000, 500, 0.8, 1.0, 2.0, 0.1)
    fit = fit_dynamic_gev(z)
    assert abs(fit.phi - 0.8) < 0.15
    assert abs(fit.sigma / 2.0 - 1.0) < 0.10
    assert abs(fit.xi - 0.1) < 0.1
    # the estimated location path tracks the simulated z series
    assert np.corrcoef(fit.mu_path, z)[0, 1] > 0.5


def test_fit_rejects_degenerate_input():
    with pytest.raises(FitError):
        fit_dynamic_gev(np.full(100, 3.0))  # constant: loud error, not NaN
    with pytest.raises(ValueError):
        fit_dynamic_gev(np.arange(19.0))  # too short
    with pytest.raises(ValueError):
        fit_dynamic_gev(np.array([[1.0, 2.0]]))
    bad = np.arange(30.0)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        fit_dynamic_gev(bad)


# ---------------------------------------------------------------------------
# forward simulation


class _ScriptedRng:
    """Replays fixed normal/uniform draws, for exact step checks."""

    def __init__(self, normal, uniform):
        self._normal = normal
        self._uniform = uniform

    def normal(self, loc, scale):
        return loc + scale * self._normal

    def uniform(self, lo, hi):
        return self._uniform


def test_simulate_step_hand_value():
    # u = e^-1 at (mu=0, sigma=1, xi=1) sits exactly at z = 0
    fit = GevDynamicFit(
        phi=0.5,
        sigma_mu=0.0,
        sigma=1.0,
        xi=1.0,
        mu_path=np.zeros(5),
        loglik=0.0,
        converged=True,
        n_evals=1,
    )
    mu_new, z_new = simulate_gev_step(fit, 0.0, _ScriptedRng(0.0, math.exp(-1.0)))
    assert mu_new == 0.0
    assert z_new == pytest.approx(0.0, abs=1e-12)


def test_simulate_step_frozen_location():
    # phi = 0 and sigma_mu = 0 pin the location at zero forever
    fit = GevDynamicFit(
        phi=0.0,
        sigma_mu=0.0,
        sigma=2.0,
        xi=0.1,
        mu_path=np.zeros(3),
        loglik=0.0,
        converged=True,
        n_evals=1,
    )
    rng = np.random.default_rng(4)
    mu = 5.0
    for _ in range(10):
        mu, _ = simulate_gev_step(fit, mu, rng)
        assert mu == 0.0


def test_simulate_step_draws_follow_the_gev_law():
    fit = GevDynamicFit(
        phi=0.0,
        sigma_mu=0.0,
        sigma=2.0,
        xi=0.1,
        mu_path=np.zeros(3),
        loglik=0.0,
        converged=True,
        n_evals=1,
    )
    rng = np.random.default_rng(5)
    draws = np.array([simulate_gev_step(fit, 0.0, rng)[1] for _ in range(100_000)])
    stat = stats.kstest(draws, lambda z: gev_cdf(z, 0.0, 2.0, 0.1)).statistic
    assert stat < 0.01


def test_fit_result_path_is_frozen():
    fit = GevDynamicFit(0.0, 1.0, 1.0, 0.1, np.zeros(4), 0.0, True, 1)
    with pytest.raises(ValueError):
        fit.mu_path[0] = 1.0
