"""Gibbs sampler for the structural time-series marginal model.

One region's annual yields are decomposed into level + slope trend, an
optional seasonal component, an AR(p) residual carried in the state, and
random-walk regression coefficients on climate covariates:

    y_t = l_t + s_t + sum_l psi_l e_{t-l} + sum_m beta_{m,t} Z_{m,t} + eps_t

Each sweep draws (a) the joint state path by forward filtering / backward
sampling, (b) every innovation variance from its conjugate inverse-gamma
conditional, and (c) each psi_l from its truncated-normal conditional
under a uniform(-1, 1) prior.  The psi conditional collects information
from both the AR transition and the observation row (psi multiplies the
lagged residual states in both places).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata

from .errors import FilterError, NumericError
from .kalman import build_state_space, filter_states, smoother_draws
from .panels import BstsConfig

__all__ = [
    "VARIANCE_NAMES",
    "BstsPosterior",
    "fit_bsts",
    "extract_pseudo_observations",
    "rank_uniformize",
    "effective_sample_size",
]

VARIANCE_NAMES = ("eps", "nu", "zeta", "omega", "eta", "lambda")

_VAR_FLOOR = 1e-12
_VAR_CEIL = 1e12


@dataclass(frozen=True)
class BstsPosterior:
    """Retained Gibbs draws for one region.

    ``variances`` columns follow :data:`VARIANCE_NAMES`: observation,
    level, slope, seasonal, AR, and coefficient innovation variances.
    """

    psi: np.ndarray          # (n, p)
    variances: np.ndarray    # (n, 6)
    states: np.ndarray       # (n, T, k)
    residuals: np.ndarray    # (n, T)
    ar_order: int
    seasonal_period: int
    n_covariates: int
    config: BstsConfig
    seed: int

    @property
    def n_draws(self) -> int:
        return self.psi.shape[0]

    @property
    def n_years(self) -> int:
        return self.residuals.shape[1]

    @property
    def _n_seasonal(self) -> int:
        return self.seasonal_period - 1 if self.seasonal_period > 1 else 0

    @property
    def level_paths(self) -> np.ndarray:
        return self.states[:, :, 0]

    @property
    def slope_paths(self) -> np.ndarray:
        return self.states[:, :, 1]

    @property
    def seasonal_paths(self) -> np.ndarray:
        return self.states[:, :, 2 : 2 + self._n_seasonal]

    @property
    def ar_paths(self) -> np.ndarray:
        a0 = 2 + self._n_seasonal
        return self.states[:, :, a0 : a0 + self.ar_order]

    @property
    def beta_paths(self) -> np.ndarray:
        b0 = 2 + self._n_seasonal + self.ar_order
        return self.states[:, :, b0 : b0 + self.n_covariates]

    def variance_draws(self, name: str) -> np.ndarray:
        return self.variances[:, VARIANCE_NAMES.index(name)]

    def diagnostics(self) -> dict:
        """Effective sample sizes of the scalar chains (reported, not enforced)."""
        out = {}
        for i, name in enumerate(VARIANCE_NAMES):
            out[f"sigma2_{name}"] = effective_sample_size(self.variances[:, i])
        for l in range(self.ar_order):
            out[f"psi_{l + 1}"] = effective_sample_size(self.psi[:, l])
        return out


def effective_sample_size(chain: np.ndarray) -> float:
    """Initial-positive-sequence autocorrelation ESS estimate."""
    x = np.asarray(chain, dtype=float)
    n = x.shape[0]
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var == 0.0:
        return float(n)
    acf_sum = 0.0
    for lag in range(1, n // 2):
        rho = float(np.dot(x[:-lag], x[lag:])) / (n * var)
        if rho <= 0.0:
            break
        acf_sum += rho
    return float(n / (1.0 + 2.0 * acf_sum))


def _draw_inverse_gamma(rng, shape: float, rate: float) -> float:
    g = rng.gamma(shape, 1.0 / rate)
    if g <= 0.0:
        return _VAR_CEIL
    return float(np.clip(1.0 / g, _VAR_FLOOR, _VAR_CEIL))


def _draw_truncated_psi(rng, mean: float, sd: float) -> float:
    """Draw from N(mean, sd^2) truncated to (-1, 1) by inverse CDF."""
    if sd <= 0.0 or not np.isfinite(sd):
        return float(rng.uniform(-1.0, 1.0))
    a = ndtr((-1.0 - mean) / sd)
    b = ndtr((1.0 - mean) / sd)
    lo, hi = min(a, b), max(a, b)
    w = rng.uniform(lo, hi)
    w = min(max(w, 1e-15), 1.0 - 1e-15)
    val = mean + sd * float(ndtri(w))
    return float(np.clip(val, -1.0 + 1e-9, 1.0 - 1e-9))


def fit_bsts(
    series: np.ndarray,
    covariates: Optional[np.ndarray],
    config: Optional[BstsConfig] = None,
    seed: Optional[int] = None,
) -> BstsPosterior:
    """Fit the marginal model to one region by Gibbs sampling.

    Parameters
    ----------
    series : (T,) yields
    covariates : (M, T) climate-index values for this region, or None
    config : sampler settings
    seed : overrides ``config.seed`` when given

    Returns the retained post-burn-in draws.  Fixing the seed reproduces
    the posterior exactly.
    """
    if config is None:
        config = BstsConfig()
    if seed is None:
        seed = config.seed
    y = np.ascontiguousarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("series must be one-dimensional")
    T = y.shape[0]
    p = config.ar_order
    S = config.seasonal_period
    if T <= p + 2:
        raise ValueError(f"series too short: T={T} needs to exceed p+2={p + 2}")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    Z = None
    M = 0
    if covariates is not None:
        Z = np.ascontiguousarray(covariates, dtype=float)
        if Z.ndim != 2 or Z.shape[1] != T:
            raise ValueError(
                f"covariates must have shape (M, {T}), got {Z.shape}"
            )
        if not np.all(np.isfinite(Z)):
            raise ValueError("covariates contain non-finite values")
        M = Z.shape[0]

    rng = np.random.default_rng(seed)
    a0_prior = config.ig_shape
    b0_prior = config.ig_rate

    # Seed psi from the autocorrelation of polynomial-detrended residuals:
    # at psi = 0 the AR block decouples from y entirely (its loading in the
    # observation row is psi itself), which is a degenerate Gibbs mode the
    # chain cannot leave, so the start must be away from zero.
    tgrid = np.arange(T, dtype=float)
    trend = np.polyval(np.polyfit(tgrid, y, min(2, T - 1)), tgrid)
    r0 = y - trend
    denom = float(r0 @ r0)
    rho = float(r0[1:] @ r0[:-1]) / denom if denom > 0 else 0.0
    psi = np.zeros(p)
    psi[0] = (1.0 if rho >= 0 else -1.0) * float(np.clip(abs(rho), 0.1, 0.9))

    var0 = max(float(np.var(r0)), 1e-6)
    sig = {
        "eps": 0.5 * var0,
        "nu": 0.05 * var0,
        "zeta": 0.005 * var0,
        "omega": 0.1 * var0 if S > 1 else 1.0,
        "eta": 0.25 * var0,
        "lambda": 0.01 if M else 1.0,
    }

    ns = S - 1 if S > 1 else 0
    ar0 = 2 + ns
    beta0 = ar0 + p
    n_keep = config.n_iter - config.burn_in
    keep_psi = np.empty((n_keep, p))
    keep_var = np.empty((n_keep, 6))
    keep_states = None
    keep_resid = np.empty((n_keep, T))

    for sweep in range(config.n_iter):
        model = build_state_space(
            psi, sig["eps"], sig["nu"], sig["zeta"], sig["omega"],
            sig["eta"], sig["lambda"], T, Z, S,
        )
        try:
            filt = filter_states(model, y)
        except FilterError as err:
            raise FilterError(
                f"Gibbs sweep {sweep}: {err}", iteration=sweep
            ) from err
        if not np.isfinite(filt.loglik):
            raise FilterError(
                f"Gibbs sweep {sweep}: non-finite filtering log-likelihood",
                iteration=sweep,
            )
        states = smoother_draws(model, y, 1, rng, filt)[0]  # (T, k)

        level = states[:, 0]
        slope = states[:, 1]
        lags = states[:, ar0 : ar0 + p]          # (T, p)
        e_next = states[1:, ar0]                 # e_t for t = 1..T-1
        betas = states[:, beta0 : beta0 + M]     # (T, M)

        # deterministic part of the observation row other than the AR lags
        base = level.copy()
        if ns:
            base += states[:, 2]
        if M:
            base += np.einsum("tm,mt->t", betas, Z)
        r_obs = y - base                          # = psi . lags + eps

        resid_old = r_obs - lags @ psi

        # (b) conjugate variance draws
        sig["eps"] = _draw_inverse_gamma(
            rng, a0_prior + 0.5 * T, b0_prior + 0.5 * float(resid_old @ resid_old)
        )
        nu = level[1:] - level[:-1] - slope[:-1]
        sig["nu"] = _draw_inverse_gamma(
            rng, a0_prior + 0.5 * (T - 1), b0_prior + 0.5 * float(nu @ nu)
        )
        zeta = slope[1:] - slope[:-1]
        sig["zeta"] = _draw_inverse_gamma(
            rng, a0_prior + 0.5 * (T - 1), b0_prior + 0.5 * float(zeta @ zeta)
        )
        if ns:
            omega = states[1:, 2] + states[:-1, 2 : 2 + ns].sum(axis=1)
            sig["omega"] = _draw_inverse_gamma(
                rng, a0_prior + 0.5 * (T - 1), b0_prior + 0.5 * float(omega @ omega)
            )
        else:
            sig["omega"] = _draw_inverse_gamma(rng, a0_prior, b0_prior)
        eta = e_next - lags[:-1] @ psi
        sig["eta"] = _draw_inverse_gamma(
            rng, a0_prior + 0.5 * (T - 1), b0_prior + 0.5 * float(eta @ eta)
        )
        if M:
            lam = betas[1:] - betas[:-1]
            sig["lambda"] = _draw_inverse_gamma(
                rng,
                a0_prior + 0.5 * M * (T - 1),
                b0_prior + 0.5 * float(np.sum(lam * lam)),
            )
        else:
            sig["lambda"] = _draw_inverse_gamma(rng, a0_prior, b0_prior)

        # (c) componentwise truncated-normal psi sweep; both the transition
        # and the observation row inform each coefficient
        for l in range(p):
            others = [j for j in range(p) if j != l]
            t_resid = e_next - lags[:-1][:, others] @ psi[others]
            o_resid = r_obs - lags[:, others] @ psi[others]
            xt = lags[:-1, l]
            xo = lags[:, l]
            prec = float(xt @ xt) / sig["eta"] + float(xo @ xo) / sig["eps"]
            if prec <= 0.0:
                psi[l] = rng.uniform(-1.0, 1.0)
                continue
            mean = (
                float(xt @ t_resid) / sig["eta"] + float(xo @ o_resid) / sig["eps"]
            ) / prec
            psi[l] = _draw_truncated_psi(rng, mean, prec ** -0.5)

        if sweep >= config.burn_in:
            i = sweep - config.burn_in
            if keep_states is None:
                keep_states = np.empty((n_keep, T, states.shape[1]))
            keep_psi[i] = psi
            keep_var[i] = [sig[name] for name in VARIANCE_NAMES]
            keep_states[i] = states
            keep_resid[i] = r_obs - lags @ psi

    return BstsPosterior(
        psi=keep_psi,
        variances=keep_var,
        states=keep_states,
        residuals=keep_resid,
        ar_order=p,
        seasonal_period=S,
        n_covariates=M,
        config=config,
        seed=int(seed),
    )


def extract_pseudo_observations(posteriors: Sequence[BstsPosterior]) -> np.ndarray:
    """Average per-draw Gaussian-CDF transforms of the residuals.

    For each region and draw, u^(i)_t = Phi(eps^(i)_t / sigma_eps^(i));
    the returned (D, T) matrix is the across-draw mean, clipped strictly
    inside (0, 1).
    """
    posteriors = list(posteriors)
    if not posteriors:
        raise ValueError("need at least one posterior")
    T = posteriors[0].n_years
    n = posteriors[0].n_draws
    for pos in posteriors[1:]:
        if pos.n_years != T or pos.n_draws != n:
            raise ValueError(
                "posteriors must share the number of years and retained draws"
            )
    out = np.empty((len(posteriors), T))
    for d, pos in enumerate(posteriors):
        sig2 = pos.variance_draws("eps")
        if np.any(sig2 <= 0.0):
            raise NumericError(
                "zero observation-variance draw; cannot standardize residuals"
            )
        u_draws = ndtr(pos.residuals / np.sqrt(sig2)[:, None])
        out[d] = u_draws.mean(axis=0)
    return np.clip(out, 1e-12, 1.0 - 1e-12)

def rank_uniformize(u_panel: np.ndarray) -> np.ndarray:
    """Recalibrate each region's series to uniform margins by its ranks.

    Averaging the per-draw CDF transforms shrinks every region's values
    toward 0.5, so the averaged series is no longer marginally uniform --
    and a copula likelihood read off non-uniform margins overstates the
    dependence badly.  Composing with the empirical CDF (average ranks over
    T + 1) restores uniform margins while preserving the ordering, which is
    all the copula sees.
    """
    u = np.asarray(u_panel, dtype=float)
    if u.ndim != 2:
        raise ValueError(f"u_panel must be (D, T), got shape {u.shape}")
    T = u.shape[1]
    out = np.empty_like(u)
    for d in range(u.shape[0]):
        out[d] = rankdata(u[d]) / (T + 1.0)
    return out
