"""Bivariate copula families with a covariate-driven time-varying parameter.

The dependence parameter follows

    theta_t = link( omega + alpha * theta_{t-1} + sum_m gamma_m * x_{m,t} )

where ``x`` are pooled extreme-climate indices and ``link`` maps the real
line onto the family's admissible range.  Each family implements the log
density, CDF, conditional distribution/quantile (for simulation), and the
Kendall-tau map used both for moment-matched starting values and for the
clustering dissimilarity.

Log densities are evaluated in log space throughout: the pseudo-likelihood
is optimized over unconstrained parameters and must stay finite for any
parameter value the link can produce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import ndtr, ndtri

from .errors import DomainError, FitError, NumericError
from .panels import OptimizerSettings

__all__ = [
    "FAMILY_NAMES",
    "get_family",
    "CopulaEvolution",
    "link",
    "evolve_theta",
    "theta_path",
    "copula_logdensity",
    "copula_cdf",
    "theta_to_tau",
    "tau_to_theta",
    "simulate_pair",
    "copula_pseudo_loglik",
    "fit_copula_evolution",
    "upper_tail_dependence",
]

_UEPS = 1e-12          # pseudo-observations are clipped to [_UEPS, 1 - _UEPS]
_FRANK_EXCLUDE = 1e-6  # Frank link snaps raw values this close to 0 outward
_FRANK_CAP = 30.0      # beyond this the Frank density cancels in doubles


def _clip_u(u):
    return np.clip(np.asarray(u, dtype=float), _UEPS, 1.0 - _UEPS)


class Family:
    """Interface shared by all copula families.

    Public methods validate a scalar ``theta``; the underscore variants are
    array-friendly in both ``u`` and ``theta`` and assume admissible values
    (which the link guarantees by construction).
    """

    name: str = ""

    def check_theta(self, theta: float) -> float:
        raise NotImplementedError

    def _theta_ok(self, theta) -> np.ndarray:
        """Elementwise admissibility mask; families override."""
        return np.isfinite(theta)

    def check_theta_array(self, theta) -> np.ndarray:
        """Array-friendly counterpart of :meth:`check_theta`."""
        th = np.asarray(theta, dtype=float)
        bad = ~self._theta_ok(th)
        if np.any(bad):
            first = th[bad][0] if th.ndim else float(th)
            raise DomainError(
                f"{self.name} copula parameter out of range (first offender {first})"
            )
        return th

    def link(self, raw):
        """Map an unconstrained real to an admissible parameter value."""
        raise NotImplementedError

    def link_inverse(self, theta: float) -> float:
        raise NotImplementedError

    def _logpdf(self, u1, u2, theta):
        raise NotImplementedError

    def logpdf(self, u1, u2, theta):
        theta = self.check_theta(theta)
        return self._logpdf(_clip_u(u1), _clip_u(u2), theta)

    def cdf(self, u1, u2, theta):
        raise NotImplementedError

    def cond_cdf(self, v, u, theta):
        """P(U2 <= v | U1 = u)."""
        raise NotImplementedError

    def cond_quantile(self, w, u, theta):
        """Inverse of :meth:`cond_cdf` in its first argument."""
        raise NotImplementedError

    def tau(self, theta: float) -> float:
        raise NotImplementedError

    def tau_inverse(self, tau: float) -> float:
        raise NotImplementedError

    def upper_tail(self, theta: float) -> float:
        return 0.0

    def sample(self, theta, n, rng):
        """Draw ``n`` pairs by conditional inversion."""
        theta = self.check_theta(theta)
        u1 = np.clip(rng.random(n), _UEPS, 1 - _UEPS)
        w = np.clip(rng.random(n), _UEPS, 1 - _UEPS)
        u2 = self.cond_quantile(w, u1, theta)
        return np.column_stack([u1, _clip_u(u2)])


class Independence(Family):
    name = "independence"

    def check_theta(self, theta):
        return 0.0

    def link(self, raw):
        return np.asarray(raw, dtype=float) * 0.0

    def link_inverse(self, theta):
        return 0.0

    def _logpdf(self, u1, u2, theta):
        return np.zeros(np.broadcast(u1, u2, theta).shape)

    def cdf(self, u1, u2, theta):
        return np.asarray(u1, dtype=float) * np.asarray(u2, dtype=float)

    def cond_cdf(self, v, u, theta):
        return np.asarray(v, dtype=float) + 0.0 * np.asarray(u, dtype=float)

    def cond_quantile(self, w, u, theta):
        return np.asarray(w, dtype=float) + 0.0 * np.asarray(u, dtype=float)

    def tau(self, theta):
        return 0.0

    def tau_inverse(self, tau):
        return 0.0


class Gaussian(Family):
    """Elliptical family; theta is the correlation, |theta| < 1."""

    name = "gaussian"

    def check_theta(self, theta):
        theta = float(theta)
        if not np.isfinite(theta) or abs(theta) >= 1.0:
            raise DomainError(f"gaussian copula needs |theta| < 1, got {theta}")
        return theta

    def _theta_ok(self, theta):
        return np.isfinite(theta) & (np.abs(theta) < 1.0)

    def link(self, raw):
        rho = np.tanh(np.asarray(raw, dtype=float))
        return np.clip(rho, -(1.0 - _UEPS), 1.0 - _UEPS)

    def link_inverse(self, theta):
        theta = float(np.clip(theta, -(1.0 - 1e-9), 1.0 - 1e-9))
        return math.atanh(theta)

    def _logpdf(self, u1, u2, rho):
        x = ndtri(u1)
        y = ndtri(u2)
        r2 = rho * rho
        return -0.5 * np.log1p(-r2) - (
            r2 * (x * x + y * y) - 2.0 * rho * x * y
        ) / (2.0 * (1.0 - r2))

    def cdf(self, u1, u2, theta):
        rho = self.check_theta(theta)
        x = ndtri(_clip_u(u1))
        y = ndtri(_clip_u(u2))
        x, y = np.broadcast_arrays(x, y)
        cov = np.array([[1.0, rho], [rho, 1.0]])
        flat = np.column_stack([np.ravel(x), np.ravel(y)])
        vals = stats.multivariate_normal(mean=[0.0, 0.0], cov=cov).cdf(flat)
        return np.reshape(vals, x.shape)

    def cond_cdf(self, v, u, theta):
        rho = self.check_theta_array(theta)
        x = ndtri(_clip_u(u))
        y = ndtri(_clip_u(v))
        return ndtr((y - rho * x) / np.sqrt(1.0 - rho * rho))

    def cond_quantile(self, w, u, theta):
        rho = self.check_theta_array(theta)
        x = ndtri(_clip_u(u))
        z = ndtri(_clip_u(w))
        return ndtr(rho * x + np.sqrt(1.0 - rho * rho) * z)

    def tau(self, theta):
        rho = self.check_theta(theta)
        return 2.0 / math.pi * math.asin(rho)

    def tau_inverse(self, tau):
        tau = float(np.clip(tau, -0.999, 0.999))
        return math.sin(math.pi * tau / 2.0)


class Clayton(Family):
    """Lower-tail dependent Archimedean family, theta > 0."""

    name = "clayton"

    def check_theta(self, theta):
        theta = float(theta)
        if not np.isfinite(theta) or theta <= 0.0:
            raise DomainError(f"clayton copula needs theta > 0, got {theta}")
        return theta

    def _theta_ok(self, theta):
        return np.isfinite(theta) & (theta > 0.0)

    def link(self, raw):
        # exp link, saturated so theta stays inside [1e-12, 1e12]
        raw = np.clip(np.asarray(raw, dtype=float), math.log(1e-12), math.log(1e12))
        return np.exp(raw)

    def link_inverse(self, theta):
        return math.log(float(np.clip(theta, 1e-12, 1e12)))

    @staticmethod
    def _log_s(u1, u2, theta):
        # log(u1^-theta + u2^-theta - 1) without overflow
        a = -theta * np.log(u1)
        b = -theta * np.log(u2)
        m = np.maximum(a, b)
        return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))

    def _logpdf(self, u1, u2, theta):
        ls = self._log_s(u1, u2, theta)
        return (
            np.log1p(theta)
            - (1.0 + theta) * (np.log(u1) + np.log(u2))
            - (2.0 + 1.0 / theta) * ls
        )

    def cdf(self, u1, u2, theta):
        theta = self.check_theta(theta)
        ls = self._log_s(_clip_u(u1), _clip_u(u2), theta)
        return np.exp(-ls / theta)

    def cond_cdf(self, v, u, theta):
        theta = self.check_theta_array(theta)
        u = _clip_u(u)
        v = _clip_u(v)
        ls = self._log_s(u, v, theta)
        return np.exp(-(1.0 + theta) * np.log(u) - (1.0 + 1.0 / theta) * ls)

    def cond_quantile(self, w, u, theta):
        theta = self.check_theta_array(theta)
        u = _clip_u(u)
        w = _clip_u(w)
        # v = [1 + u^-theta (w^(-theta/(1+theta)) - 1)]^(-1/theta), in logs
        t = -theta * np.log(u) + np.log(np.expm1(-theta / (1.0 + theta) * np.log(w)))
        return np.exp(-np.logaddexp(0.0, t) / theta)

    def tau(self, theta):
        theta = self.check_theta(theta)
        return theta / (theta + 2.0)

    def tau_inverse(self, tau):
        tau = float(np.clip(tau, 1e-6, 0.999))
        return 2.0 * tau / (1.0 - tau)


class Gumbel(Family):
    """Upper-tail dependent Archimedean extreme-value family, theta >= 1."""

    name = "gumbel"

    def check_theta(self, theta):
        theta = float(theta)
        if not np.isfinite(theta) or theta < 1.0:
            raise DomainError(f"gumbel copula needs theta >= 1, got {theta}")
        return theta

    def _theta_ok(self, theta):
        return np.isfinite(theta) & (theta >= 1.0)

    def link(self, raw):
        raw = np.clip(np.asarray(raw, dtype=float), -745.0, math.log(1e12))
        return 1.0 + np.exp(raw)

    def link_inverse(self, theta):
        theta = float(np.clip(theta, 1.0 + 1e-12, 1e12))
        return math.log(theta - 1.0)

    def _logpdf(self, u1, u2, theta):
        lu = -np.log(u1)
        lv = -np.log(u2)
        loga = np.logaddexp(theta * np.log(lu), theta * np.log(lv))
        s = np.exp(loga / theta)  # a^(1/theta)
        return (
            -s
            + (lu + lv)
            + (theta - 1.0) * (np.log(lu) + np.log(lv))
            + (1.0 / theta - 2.0) * loga
            + np.log(s + theta - 1.0)
        )

    def cdf(self, u1, u2, theta):
        theta = self.check_theta(theta)
        lu = -np.log(_clip_u(u1))
        lv = -np.log(_clip_u(u2))
        loga = np.logaddexp(theta * np.log(lu), theta * np.log(lv))
        return np.exp(-np.exp(loga / theta))

    def cond_cdf(self, v, u, theta):
        theta = self.check_theta_array(theta)
        u = _clip_u(u)
        lu = -np.log(u)
        lv = -np.log(_clip_u(v))
        loga = np.logaddexp(theta * np.log(lu), theta * np.log(lv))
        s = np.exp(loga / theta)
        # dC/du = C * a^(1/theta - 1) * (-log u)^(theta-1) / u
        return np.exp(
            -s + (1.0 / theta - 1.0) * loga + (theta - 1.0) * np.log(lu) + lu
        )

    def cond_quantile(self, w, u, theta):
        return _bisect_cond(self, w, u, theta)

    def tau(self, theta):
        theta = self.check_theta(theta)
        return 1.0 - 1.0 / theta

    def tau_inverse(self, tau):
        tau = float(np.clip(tau, 0.0, 0.999))
        if tau <= 0.0:
            return 1.0
        return 1.0 / (1.0 - tau)

    def upper_tail(self, theta):
        theta = self.check_theta(theta)
        return 2.0 - 2.0 ** (1.0 / theta)


class Joe(Family):
    """Upper-tail dependent Archimedean family, theta >= 1."""

    name = "joe"

    def check_theta(self, theta):
        theta = float(theta)
        if not np.isfinite(theta) or theta < 1.0:
            raise DomainError(f"joe copula needs theta >= 1, got {theta}")
        return theta

    def _theta_ok(self, theta):
        return np.isfinite(theta) & (theta >= 1.0)

    def link(self, raw):
        raw = np.clip(np.asarray(raw, dtype=float), -745.0, math.log(1e12))
        return 1.0 + np.exp(raw)

    def link_inverse(self, theta):
        theta = float(np.clip(theta, 1.0 + 1e-12, 1e12))
        return math.log(theta - 1.0)

    @staticmethod
    def _log_xy_A(u1, u2, theta):
        lx = theta * np.log1p(-u1)   # log (1-u1)^theta
        ly = theta * np.log1p(-u2)
        lse = np.logaddexp(lx, ly)
        # A = x + y - x y = (x + y)(1 - xy/(x+y)); the ratio is < 1 always
        logA = lse + np.log1p(-np.exp(lx + ly - lse))
        return lx, ly, logA

    def _logpdf(self, u1, u2, theta):
        lx, ly, logA = self._log_xy_A(u1, u2, theta)
        A = np.exp(logA)
        return (
            (1.0 / theta - 2.0) * logA
            + (theta - 1.0) * (np.log1p(-u1) + np.log1p(-u2))
            + np.log(theta - 1.0 + A)
        )

    def cdf(self, u1, u2, theta):
        theta = self.check_theta(theta)
        _, _, logA = self._log_xy_A(_clip_u(u1), _clip_u(u2), theta)
        return -np.expm1(logA / theta)

    def cond_cdf(self, v, u, theta):
        theta = self.check_theta_array(theta)
        u = _clip_u(u)
        v = _clip_u(v)
        lx, ly, logA = self._log_xy_A(u, v, theta)
        # dC/du = A^(1/theta-1) (1-u)^(theta-1) (1 - y)
        return np.exp(
            (1.0 / theta - 1.0) * logA
            + (theta - 1.0) * np.log1p(-u)
            + np.log1p(-np.exp(ly))
        )

    def cond_quantile(self, w, u, theta):
        return _bisect_cond(self, w, u, theta)

    def tau(self, theta):
        theta = self.check_theta(theta)
        if theta == 1.0:
            return 0.0

        def integrand(t):
            # generator ratio phi/phi' for the Joe generator
            g = -np.expm1(theta * np.log1p(-t))   # 1 - (1-t)^theta
            if g <= 0.0 or g >= 1.0:
                return 0.0
            return math.log(g) * g / (theta * (1.0 - t) ** (theta - 1.0))

        val, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
        return 1.0 + 4.0 * val

    def tau_inverse(self, tau):
        tau = float(np.clip(tau, 0.0, 0.99))
        if tau <= 1e-6:
            return 1.0
        return optimize.brentq(
            lambda th: self.tau(th) - tau, 1.0 + 1e-9, 500.0, xtol=1e-10
        )

    def upper_tail(self, theta):
        theta = self.check_theta(theta)
        return 2.0 - 2.0 ** (1.0 / theta)


class Frank(Family):
    """Radially symmetric family, theta in R \\ {0}; negative = discordance."""

    name = "frank"

    def check_theta(self, theta):
        theta = float(theta)
        if not np.isfinite(theta) or theta == 0.0:
            raise DomainError(f"frank copula needs finite theta != 0, got {theta}")
        return theta

    def _theta_ok(self, theta):
        return np.isfinite(theta) & (theta != 0.0)

    def link(self, raw):
        raw = np.clip(np.asarray(raw, dtype=float), -_FRANK_CAP, _FRANK_CAP)
        # snap the exclusion zone around zero outward (0 itself goes positive)
        return np.where(
            np.abs(raw) < _FRANK_EXCLUDE,
            np.where(raw < 0.0, -_FRANK_EXCLUDE, _FRANK_EXCLUDE),
            raw,
        ) + 0.0

    def link_inverse(self, theta):
        theta = float(np.clip(theta, -_FRANK_CAP, _FRANK_CAP))
        if abs(theta) < _FRANK_EXCLUDE:
            theta = _FRANK_EXCLUDE if theta >= 0 else -_FRANK_EXCLUDE
        return theta

    @staticmethod
    def _log_abs_den(u1, u2, theta):
        # |(1-e^-t) - (1-e^-tu)(1-e^-tv)| = |A + B - E - AB| with A=e^-tu,
        # B=e^-tv, E=e^-t; factor out the largest exponent before summing.
        u1, u2, theta = np.broadcast_arrays(u1, u2, theta)
        xs = np.stack([-theta * u1, -theta * u2, -theta, -theta * (u1 + u2)])
        signs = np.array([1.0, 1.0, -1.0, -1.0]).reshape(
            4, *([1] * (xs.ndim - 1))
        )
        m = xs.max(axis=0)
        total = (signs * np.exp(xs - m)).sum(axis=0)
        return m + np.log(np.abs(total))

    def _logpdf(self, u1, u2, theta):
        theta = np.asarray(theta, dtype=float)
        # c = theta (1-e^-theta) e^{-theta(u+v)} / den^2; the prefactor is
        # positive for either sign of theta.
        log_pref = np.log(-theta * np.expm1(-theta))
        return log_pref - theta * (u1 + u2) - 2.0 * self._log_abs_den(u1, u2, theta)

    def cdf(self, u1, u2, theta):
        theta = self.check_theta(theta)
        g1 = np.expm1(-theta * _clip_u(u1))
        g2 = np.expm1(-theta * _clip_u(u2))
        gt = math.expm1(-theta)
        return -np.log1p(g1 * g2 / gt) / theta

    def cond_cdf(self, v, u, theta):
        theta = self.check_theta_array(theta)
        u = _clip_u(u)
        v = _clip_u(v)
        gu = np.expm1(-theta * u)
        gv = np.expm1(-theta * v)
        gt = np.expm1(-theta)
        return np.exp(-theta * u) * gv / (gt + gu * gv)

    def cond_quantile(self, w, u, theta):
        theta = self.check_theta_array(theta)
        u = _clip_u(u)
        w = _clip_u(w)
        gu = np.expm1(-theta * u)
        gt = np.expm1(-theta)
        gv = w * gt / (np.exp(-theta * u) - w * gu)
        return _clip_u(-np.log1p(gv) / theta)

    def tau(self, theta):
        theta = self.check_theta(theta)

        def debye1(t):
            val, _ = integrate.quad(lambda s: s / math.expm1(s), 0.0, t, limit=200)
            return val / t

        return 1.0 - 4.0 / theta * (1.0 - debye1(theta))

    def tau_inverse(self, tau):
        tau = float(np.clip(tau, -0.95, 0.95))
        if abs(tau) < 1e-6:
            return _FRANK_EXCLUDE
        sgn = 1.0 if tau > 0 else -1.0
        theta = optimize.brentq(
            lambda th: self.tau(th) - abs(tau), 1e-6, _FRANK_CAP, xtol=1e-10
        )
        return sgn * theta


def _bisect_cond(fam: Family, w, u, theta, iters: int = 60):
    """Vectorized bisection solve of cond_cdf(v | u) = w on (0, 1)."""
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    w, u = np.broadcast_arrays(w, u)
    lo = np.full(w.shape, _UEPS)
    hi = np.full(w.shape, 1.0 - _UEPS)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        too_low = fam.cond_cdf(mid, u, theta) < w
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    return 0.5 * (lo + hi)


_REGISTRY = {
    f.name: f
    for f in (Independence(), Gaussian(), Clayton(), Gumbel(), Joe(), Frank())
}
FAMILY_NAMES = tuple(sorted(_REGISTRY))


def get_family(name) -> Family:
    if isinstance(name, Family):
        return name
    try:
        return _REGISTRY[str(name).lower()]
    except KeyError:
        raise KeyError(
            f"unknown copula family '{name}'; choose from {FAMILY_NAMES}"
        ) from None


def link(family, raw):
    """Apply the family link to unconstrained values (array-friendly)."""
    return get_family(family).link(raw)


def copula_logdensity(family, u1, u2, theta):
    """Log copula density at (u1, u2); u arguments are clipped into (0, 1)."""
    return get_family(family).logpdf(u1, u2, theta)


def copula_cdf(family, u1, u2, theta):
    return get_family(family).cdf(u1, u2, theta)


def theta_to_tau(family, theta):
    """Kendall's tau implied by the parameter (scalar or array)."""
    fam = get_family(family)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        return fam.tau(float(theta))
    return np.array([fam.tau(float(t)) for t in theta.ravel()]).reshape(theta.shape)


def tau_to_theta(family, tau):
    return get_family(family).tau_inverse(float(tau))


def upper_tail_dependence(family, theta):
    return get_family(family).upper_tail(float(theta))


def simulate_pair(family, theta, n, rng):
    """Draw ``n`` dependent uniform pairs from the family at ``theta``."""
    return get_family(family).sample(theta, int(n), rng)


@dataclass(frozen=True)
class CopulaEvolution:
    """Fitted (or assumed) parameters of the theta recursion."""

    family: str
    omega: float
    alpha: float
    gammas: np.ndarray
    theta_init: float

    def __post_init__(self):
        g = np.array(self.gammas, dtype=float, copy=True)
        g.flags.writeable = False
        object.__setattr__(self, "gammas", g)

    @property
    def n_covariates(self) -> int:
        return self.gammas.shape[0]


def evolve_theta(evolution: CopulaEvolution, theta_prev: float, x_t) -> float:
    """One step of the parameter recursion given last period's theta."""
    fam = get_family(evolution.family)
    x_t = np.asarray(x_t, dtype=float)
    raw = evolution.omega + evolution.alpha * theta_prev + float(evolution.gammas @ x_t)
    return float(fam.link(raw))


def theta_path(evolution: CopulaEvolution, x_panel: np.ndarray) -> np.ndarray:
    """Parameter trajectory over an (index, year) covariate block.

    ``x_panel`` has shape (M, T); the recursion starts from
    ``evolution.theta_init`` as the value feeding the first step.
    """
    x_panel = np.asarray(x_panel, dtype=float)
    if x_panel.ndim != 2 or x_panel.shape[0] != evolution.n_covariates:
        raise ValueError(
            f"x panel shape {x_panel.shape} does not match "
            f"{evolution.n_covariates} evolution covariates"
        )
    fam = get_family(evolution.family)
    drive = evolution.omega + evolution.gammas @ x_panel  # (T,)
    T = x_panel.shape[1]
    out = np.empty(T)
    prev = evolution.theta_init
    for t in range(T):
        prev = float(fam.link(drive[t] + evolution.alpha * prev))
        out[t] = prev
    return out


def copula_pseudo_loglik(
    u_pair: np.ndarray, x_panel: np.ndarray, evolution: CopulaEvolution
) -> float:
    """Pseudo log-likelihood of a (2, T) pseudo-observation block.

    Sums the log copula density along the theta trajectory implied by the
    evolution parameters and the covariate block.
    """
    u_pair = np.asarray(u_pair, dtype=float)
    if u_pair.ndim != 2 or u_pair.shape[0] != 2:
        raise ValueError(f"u_pair must have shape (2, T), got {u_pair.shape}")
    fam = get_family(evolution.family)
    thetas = theta_path(evolution, x_panel)
    ll = fam._logpdf(_clip_u(u_pair[0]), _clip_u(u_pair[1]), thetas)
    bad = ~np.isfinite(ll)
    if np.any(bad):
        t = int(np.flatnonzero(bad)[0])
        raise NumericError(
            f"non-finite copula log-density at t={t} "
            f"(theta={thetas[t]:.6g}, u=({u_pair[0][t]:.6g}, {u_pair[1][t]:.6g}))"
        )
    return float(np.sum(ll))


def _moment_start(fam: Family, u_pair: np.ndarray) -> float:
    """Moment-matched constant-parameter start: invert empirical tau."""
    tau_hat = stats.kendalltau(u_pair[0], u_pair[1]).statistic
    if not np.isfinite(tau_hat):
        tau_hat = 0.0
    try:
        theta0 = fam.tau_inverse(tau_hat)
    except Exception:
        theta0 = fam.tau_inverse(0.1)
    return fam.link_inverse(theta0)


def fit_copula_evolution(
    u_pair: np.ndarray,
    x_panel: np.ndarray,
    family,
    settings: Optional[OptimizerSettings] = None,
    rng: Optional[np.random.Generator] = None,
):
    """Maximize the pseudo-likelihood over (omega, alpha, gamma_1..gamma_M).

    Returns ``(evolution, loglik, n_evals, converged)``.  Uses a Nelder-Mead
    simplex started from the moment-matched constant parameter
    (alpha = gamma = 0) plus jittered restarts; the best of all restarts is
    kept and is never worse than the starting point.
    """
    if settings is None:
        settings = OptimizerSettings()
    if rng is None:
        rng = np.random.default_rng(0)
    fam = get_family(family)
    u_pair = np.asarray(u_pair, dtype=float)
    x_panel = np.asarray(x_panel, dtype=float)
    M = x_panel.shape[0]

    omega0 = _moment_start(fam, u_pair)
    theta_init = float(fam.link(omega0))

    if fam.name == "independence":
        evo = CopulaEvolution(fam.name, 0.0, 0.0, np.zeros(M), 0.0)
        return evo, copula_pseudo_loglik(u_pair, x_panel, evo), 0, True

    def build(params):
        return CopulaEvolution(
            fam.name, float(params[0]), float(params[1]), params[2:].copy(), theta_init
        )

    n_evals = 0

    def objective(params):
        nonlocal n_evals
        n_evals += 1
        try:
            ll = copula_pseudo_loglik(u_pair, x_panel, build(params))
        except (FloatingPointError, NumericError):
            return 1e10
        if not np.isfinite(ll):
            return 1e10
        return -ll

    p0 = np.zeros(2 + M)
    p0[0] = omega0
    best_x, best_f = p0, objective(p0)
    starts = [p0]
    for _ in range(settings.restarts):
        starts.append(p0 + rng.normal(scale=[0.5, 0.2] + [0.1] * M))
    converged = False
    for x0 in starts:
        res = optimize.minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={
                "maxfev": settings.max_evals,
                "fatol": settings.tol,
                "xatol": 1e-6,
            },
        )
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
            converged = bool(res.success)
        elif res.success and np.isclose(res.fun, best_f, rtol=0, atol=1e-6):
            converged = True
    if not np.isfinite(best_f) or best_f >= 1e10:
        raise FitError("copula evolution fit produced no finite likelihood", best=None)
    return build(best_x), -best_f, n_evals, converged


@dataclass(frozen=True)
class FullModelFit:
    """Joint dependence-and-extremes fit for a two-division panel.

    The pseudo-likelihood factors into a copula-evolution block (driven by
    the cross-region maxima of the climate indices) and one dynamic GEV
    block per (region, index) series; the blocks share no parameters, so
    each is maximized by its own optimizer and the objectives are reported
    separately alongside their sum.
    """

    evolution: CopulaEvolution
    gev_fits: tuple
    copula_loglik: float
    gev_loglik: float
    thetas: np.ndarray
    taus: np.ndarray
    converged: bool

    def __post_init__(self):
        object.__setattr__(self, "gev_fits", tuple(self.gev_fits))
        object.__setattr__(self, "thetas", _freeze_array(self.thetas))
        object.__setattr__(self, "taus", _freeze_array(self.taus))

    @property
    def total_loglik(self) -> float:
        return self.copula_loglik + self.gev_loglik


def _freeze_array(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


def fit_full_model(
    u_panel: np.ndarray,
    covariates,
    family,
    settings: Optional[OptimizerSettings] = None,
    rng: Optional[np.random.Generator] = None,
) -> FullModelFit:
    """Fit the copula evolution and every per-(region, index) GEV model.

    ``u_panel`` is the (2, T) block of pseudo-observations for the two
    divisions; ``covariates`` is a :class:`~cropcast.panels.CovariatePanel`
    whose ``cross_max`` drives the copula parameter and whose per-region
    series get dynamic GEV fits.  The GEV blocks do not share parameters
    with the copula recursion, so each block is maximized independently
    and the reported total is the sum of the block objectives.

    A fit that stops on its evaluation budget (or a GEV block that raises
    but carries a usable best-so-far) is still returned, with
    ``converged=False``.
    """
    from .gev import fit_dynamic_gev

    if settings is None:
        settings = OptimizerSettings()
    if rng is None:
        rng = np.random.default_rng(0)
    u_panel = np.asarray(u_panel, dtype=float)
    if u_panel.ndim != 2 or u_panel.shape[0] != 2:
        raise ValueError(f"u_panel must have shape (2, T), got {u_panel.shape}")
    x_panel = np.asarray(covariates.cross_max, dtype=float)
    if x_panel.shape[1] != u_panel.shape[1]:
        raise ValueError(
            f"covariate years ({x_panel.shape[1]}) do not match "
            f"pseudo-observation years ({u_panel.shape[1]})"
        )

    evolution, cop_ll, _, cop_converged = fit_copula_evolution(
        u_panel, x_panel, family, settings, rng
    )

    gev_fits = []
    all_converged = cop_converged
    D, M, _ = covariates.values.shape
    for d in range(D):
        for m in range(M):
            try:
                fit = fit_dynamic_gev(covariates.values[d, m], settings, rng)
            except FitError as err:
                if err.best is None:
                    raise
                fit = err.best
            gev_fits.append(fit)
            all_converged = all_converged and fit.converged

    gev_ll = float(sum(f.loglik for f in gev_fits))
    fam = get_family(evolution.family)
    thetas = theta_path(evolution, x_panel)
    taus = np.array([fam.tau(float(t)) for t in thetas])
    return FullModelFit(
        evolution=evolution,
        gev_fits=tuple(gev_fits),
        copula_loglik=float(cop_ll),
        gev_loglik=gev_ll,
        thetas=thetas,
        taus=taus,
        converged=bool(all_converged),
    )
