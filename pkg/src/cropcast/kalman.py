"""Linear-Gaussian state space: Kalman filter and backward state sampling.

The state vector stacks, in order: level, slope, a seasonal block of S-1
lags (absent when S = 1), an autoregressive block holding the p lagged
observation-equation residuals (e_{t-1} .. e_{t-p}), and M random-walk
regression coefficients.  The observation row loads the level, the current
seasonal component, the AR lag prediction (coefficients psi), and the
covariate values.

The filter, the backward smoothing pass, and path sampling are compiled
with numba: the Gibbs sampler calls them thousands of times per fit and
the matrices are tiny (k <= ~10), so explicit loops beat BLAS dispatch.
The backward pass precomputes the gain and conditional Cholesky factors
once; drawing additional paths afterwards costs only affine recursions,
which makes large smoothing-draw batches cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from scipy import linalg as sla

from .errors import FilterError

__all__ = [
    "StateSpaceModel",
    "FilterResult",
    "build_state_space",
    "filter_states",
    "log_marginal_likelihood",
    "smoother_draws",
]

_LOG2PI = math.log(2.0 * math.pi)


@njit(cache=True, nogil=True)
def _psd_chol(A, L, tol):
    """Lower Cholesky of a positive-semidefinite matrix, in place into L.

    Zero pivots (exactly deterministic directions, which this state space
    produces by construction for lag-copy components) yield zero rows.
    Returns False when a pivot is meaningfully negative.
    """
    k = A.shape[0]
    for i in range(k):
        for j in range(k):
            L[i, j] = 0.0
    for j in range(k):
        s = A[j, j]
        for m in range(j):
            s -= L[j, m] * L[j, m]
        if s <= tol:
            if s < -1e4 * tol:
                return False
            L[j, j] = 0.0
        else:
            L[j, j] = math.sqrt(s)
        for i in range(j + 1, k):
            s2 = A[i, j]
            for m in range(j):
                s2 -= L[i, m] * L[j, m]
            L[i, j] = s2 / L[j, j] if L[j, j] > 0.0 else 0.0
    return True


@njit(cache=True, nogil=True)
def _chol_with_jitter(A, L):
    """PSD Cholesky with an escalating diagonal jitter ladder."""
    k = A.shape[0]
    scale = 0.0
    for i in range(k):
        scale += abs(A[i, i])
    scale = scale / k + 1e-300
    tol = 1e-12 * scale
    if _psd_chol(A, L, tol):
        return True
    B = A.copy()
    for eps in (1e-10, 1e-7, 1e-4):
        for i in range(k):
            B[i, i] = A[i, i] + eps * scale
        if _psd_chol(B, L, tol):
            return True
    return False


@njit(cache=True, nogil=True)
def _kalman_core(y, H, F, Qdiag, r, m0, P0, fm, fP, pm, pP):
    """Forward filter; fills filtered/predicted moments.

    Returns (loglik, status); status 0 on success, t+1 when the innovation
    variance degenerates at step t.
    """
    T = y.shape[0]
    k = m0.shape[0]
    m = m0.copy()
    P = P0.copy()
    mnew = np.empty(k)
    Pnew = np.empty((k, k))
    Ph = np.empty(k)
    K = np.empty(k)
    ll = 0.0
    for t in range(T):
        if t > 0:
            # m <- F m ; P <- F P F' + Q
            for i in range(k):
                acc = 0.0
                for j in range(k):
                    acc += F[i, j] * m[j]
                mnew[i] = acc
            for i in range(k):
                for j in range(k):
                    acc = 0.0
                    for a in range(k):
                        acc += F[i, a] * P[a, j]
                    Pnew[i, j] = acc
            for i in range(k):
                for j in range(i + 1):
                    acc = 0.0
                    for a in range(k):
                        acc += Pnew[i, a] * F[j, a]
                    P[i, j] = acc
                    P[j, i] = acc
            for i in range(k):
                m[i] = mnew[i]
                P[i, i] += Qdiag[i]
        for i in range(k):
            pm[t, i] = m[i]
            for j in range(k):
                pP[t, i, j] = P[i, j]
        # innovation
        v = y[t]
        for i in range(k):
            v -= H[t, i] * m[i]
        S = r
        for i in range(k):
            acc = 0.0
            for j in range(k):
                acc += P[i, j] * H[t, j]
            Ph[i] = acc
            S += H[t, i] * acc
        if not (S > 0.0) or not np.isfinite(S):
            return ll, t + 1
        for i in range(k):
            K[i] = Ph[i] / S
            m[i] += K[i] * v
        # Joseph-form update keeps P symmetric PSD with diffuse priors:
        # (I-KH) P (I-KH)' + r KK'  =  P - K Ph' - Ph K' + S K K'
        for i in range(k):
            for j in range(i + 1):
                acc = P[i, j] - K[i] * Ph[j] - Ph[i] * K[j] + S * K[i] * K[j]
                P[i, j] = acc
                P[j, i] = acc
        ll += -0.5 * (_LOG2PI + math.log(S) + v * v / S)
        for i in range(k):
            fm[t, i] = m[i]
            for j in range(k):
                fP[t, i, j] = P[i, j]
    return ll, 0


@njit(cache=True, nogil=True)
def _backward_pass(F, fm, fP, pm, pP, J, L):
    """Precompute smoothing gains J_t and conditional Cholesky factors L_t.

    The sampling recursion is then
        x_{T-1} = fm_{T-1} + L_{T-1} n_{T-1}
        x_t     = fm_t + J_t (x_{t+1} - pm_{t+1}) + L_t n_t .
    Returns 0 on success, t+1 if a conditional covariance is indefinite.
    """
    T, k = fm.shape
    A = np.empty((k, k))
    B = np.empty((k, k))
    X = np.empty((k, k))
    Lp = np.empty((k, k))
    if not _chol_with_jitter(np.ascontiguousarray(fP[T - 1]), A):
        return T
    for i in range(k):
        for j in range(k):
            L[T - 1, i, j] = A[i, j]
    for t in range(T - 2, -1, -1):
        # B = F fP[t]  (equals (fP[t] F')' by symmetry of fP)
        for i in range(k):
            for j in range(k):
                acc = 0.0
                for a in range(k):
                    acc += F[i, a] * fP[t, a, j]
                B[i, j] = acc
        # solve pP[t+1] X = B  =>  X = J_t'
        for i in range(k):
            for j in range(k):
                A[i, j] = pP[t + 1, i, j]
        if not _chol_with_jitter(A, Lp):
            return t + 1
        # forward then backward triangular solves, zero pivots -> zeros
        for col in range(k):
            for i in range(k):
                s = B[i, col]
                for m in range(i):
                    s -= Lp[i, m] * X[m, col]
                X[i, col] = s / Lp[i, i] if Lp[i, i] > 0.0 else 0.0
            for i in range(k - 1, -1, -1):
                s = X[i, col]
                for m in range(i + 1, k):
                    s -= Lp[m, i] * X[m, col]
                X[i, col] = s / Lp[i, i] if Lp[i, i] > 0.0 else 0.0
        for i in range(k):
            for j in range(k):
                J[t, i, j] = X[j, i]
        # conditional covariance fP[t] - J pP[t+1] J'
        for i in range(k):
            for j in range(k):
                acc = 0.0
                for a in range(k):
                    acc += J[t, i, a] * pP[t + 1, a, j]
                B[i, j] = acc
        for i in range(k):
            for j in range(i + 1):
                acc = fP[t, i, j]
                for a in range(k):
                    acc -= B[i, a] * J[t, j, a]
                A[i, j] = acc
                A[j, i] = acc
        if not _chol_with_jitter(A, Lp):
            return t + 1
        for i in range(k):
            for j in range(k):
                L[t, i, j] = Lp[i, j]
    return 0


@njit(cache=True, nogil=True)
def _sample_paths(fm, pm, J, L, normals, out):
    """Draw smoothing paths given precomputed gains and factors.

    normals: (n, T, k) standard normals; out: (n, T, k).
    """
    n = normals.shape[0]
    T, k = fm.shape
    for r in range(n):
        for i in range(k):
            acc = fm[T - 1, i]
            for j in range(i + 1):
                acc += L[T - 1, i, j] * normals[r, T - 1, j]
            out[r, T - 1, i] = acc
        for t in range(T - 2, -1, -1):
            for i in range(k):
                acc = fm[t, i]
                for j in range(k):
                    acc += J[t, i, j] * (out[r, t + 1, j] - pm[t + 1, j])
                for j in range(i + 1):
                    acc += L[t, i, j] * normals[r, t, j]
                out[r, t, i] = acc
    return 0


@dataclass(frozen=True)
class StateSpaceModel:
    """Assembled system matrices plus the component layout."""

    F: np.ndarray
    Qdiag: np.ndarray
    H: np.ndarray          # (T, k) observation rows
    obs_var: float
    m0: np.ndarray
    P0: np.ndarray
    p: int                 # AR order
    S: int                 # seasonal period (1 = no seasonal block)
    M: int                 # number of dynamic regression coefficients

    @property
    def k(self) -> int:
        return self.F.shape[0]

    @property
    def n_seasonal(self) -> int:
        return self.S - 1 if self.S > 1 else 0

    @property
    def idx_level(self) -> int:
        return 0

    @property
    def idx_slope(self) -> int:
        return 1

    @property
    def sl_seasonal(self) -> slice:
        return slice(2, 2 + self.n_seasonal)

    @property
    def sl_ar(self) -> slice:
        return slice(2 + self.n_seasonal, 2 + self.n_seasonal + self.p)

    @property
    def sl_beta(self) -> slice:
        start = 2 + self.n_seasonal + self.p
        return slice(start, start + self.M)


@dataclass(frozen=True)
class FilterResult:
    filtered_mean: np.ndarray
    filtered_cov: np.ndarray
    predicted_mean: np.ndarray
    predicted_cov: np.ndarray
    loglik: float


def _stationary_ar_cov(psi: np.ndarray, sig_eta2: float) -> np.ndarray:
    """Stationary covariance of the lag vector (diffuse fallback if unstable)."""
    p = psi.shape[0]
    if p == 1:
        if abs(psi[0]) < 1.0 - 1e-6:
            return np.array([[sig_eta2 / (1.0 - psi[0] ** 2)]])
        return np.array([[1e6]])
    comp = np.zeros((p, p))
    comp[0, :] = psi
    comp[1:, :-1] = np.eye(p - 1)
    if np.max(np.abs(np.linalg.eigvals(comp))) >= 1.0 - 1e-6:
        return 1e6 * np.eye(p)
    Q = np.zeros((p, p))
    Q[0, 0] = sig_eta2
    cov = sla.solve_discrete_lyapunov(comp, Q)
    return 0.5 * (cov + cov.T)


def build_state_space(
    psi: np.ndarray,
    sig_eps2: float,
    sig_nu2: float,
    sig_zeta2: float,
    sig_omega2: float,
    sig_eta2: float,
    sig_lambda2: float,
    T: int,
    Z: Optional[np.ndarray] = None,
    seasonal_period: int = 1,
) -> StateSpaceModel:
    """Assemble the system matrices for one region.

    ``psi`` has length p; ``Z`` is the (M, T) covariate block or None.
    """
    psi = np.asarray(psi, dtype=float)
    p = psi.shape[0]
    S = int(seasonal_period)
    ns = S - 1 if S > 1 else 0
    M = 0 if Z is None else int(Z.shape[0])
    k = 2 + ns + p + M

    F = np.zeros((k, k))
    Qdiag = np.zeros(k)
    F[0, 0] = 1.0
    F[0, 1] = 1.0
    F[1, 1] = 1.0
    Qdiag[0] = sig_nu2
    Qdiag[1] = sig_zeta2
    if ns:
        F[2, 2 : 2 + ns] = -1.0
        for i in range(1, ns):
            F[2 + i, 2 + i - 1] = 1.0
        Qdiag[2] = sig_omega2
    a0 = 2 + ns
    F[a0, a0 : a0 + p] = psi
    for i in range(1, p):
        F[a0 + i, a0 + i - 1] = 1.0
    Qdiag[a0] = sig_eta2
    b0 = a0 + p
    for i in range(M):
        F[b0 + i, b0 + i] = 1.0
        Qdiag[b0 + i] = sig_lambda2

    H = np.zeros((T, k))
    H[:, 0] = 1.0
    if ns:
        H[:, 2] = 1.0
    H[:, a0 : a0 + p] = psi
    if M:
        H[:, b0 : b0 + M] = np.asarray(Z, dtype=float).T

    m0 = np.zeros(k)
    P0 = np.zeros((k, k))
    P0[0, 0] = P0[1, 1] = 1e6
    for i in range(ns):
        P0[2 + i, 2 + i] = 1e6
    P0[a0 : a0 + p, a0 : a0 + p] = _stationary_ar_cov(psi, sig_eta2)
    for i in range(M):
        P0[b0 + i, b0 + i] = 1e6

    return StateSpaceModel(
        F=F, Qdiag=Qdiag, H=H, obs_var=float(sig_eps2), m0=m0, P0=P0,
        p=p, S=S, M=M,
    )


def filter_states(model: StateSpaceModel, y: np.ndarray) -> FilterResult:
    """Run the Kalman filter over the series."""
    y = np.ascontiguousarray(y, dtype=float)
    T = y.shape[0]
    k = model.k
    fm = np.empty((T, k))
    fP = np.empty((T, k, k))
    pm = np.empty((T, k))
    pP = np.empty((T, k, k))
    ll, status = _kalman_core(
        y,
        np.ascontiguousarray(model.H),
        np.ascontiguousarray(model.F),
        np.ascontiguousarray(model.Qdiag),
        model.obs_var,
        np.ascontiguousarray(model.m0),
        np.ascontiguousarray(model.P0),
        fm, fP, pm, pP,
    )
    if status != 0:
        raise FilterError(
            f"innovation variance degenerated at observation {status - 1}",
            iteration=status - 1,
        )
    return FilterResult(fm, fP, pm, pP, ll)


def log_marginal_likelihood(model: StateSpaceModel, y: np.ndarray) -> float:
    """Prediction-error-decomposition log marginal likelihood of y."""
    return filter_states(model, y).loglik


def smoother_draws(
    model: StateSpaceModel,
    y: np.ndarray,
    n: int,
    rng: np.random.Generator,
    filt: Optional[FilterResult] = None,
) -> np.ndarray:
    """Joint posterior draws of the full state path, shape (n, T, k).

    Runs the filter (unless one is supplied), precomputes the backward
    pass, then samples ``n`` paths from pre-generated standard normals so
    the draw stream depends only on the generator state.
    """
    y = np.ascontiguousarray(y, dtype=float)
    if filt is None:
        filt = filter_states(model, y)
    T, k = filt.filtered_mean.shape
    J = np.empty((max(T - 1, 0), k, k))
    L = np.empty((T, k, k))
    status = _backward_pass(
        np.ascontiguousarray(model.F),
        filt.filtered_mean, filt.filtered_cov,
        filt.predicted_mean, filt.predicted_cov,
        J, L,
    )
    if status != 0:
        raise FilterError(
            f"backward pass found an indefinite conditional covariance at "
            f"step {status - 1}",
            iteration=status - 1,
        )
    normals = rng.standard_normal((n, T, k))
    out = np.empty((n, T, k))
    _sample_paths(filt.filtered_mean, filt.predicted_mean, J, L, normals, out)
    return out
