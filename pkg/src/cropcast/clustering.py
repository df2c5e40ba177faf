"""Region clustering from dependence structure and geography.

Every pair of regions gets its own conditional-copula fit; two pairs are
compared by the average absolute gap between their Kendall's-tau
trajectories.  Pair-level gaps roll up to a region-level dissimilarity by
taking the worst gap over the pairs each region participates in, and that
matrix is blended with great-circle distance (both min-max normalized, so
the blend weight ``beta`` is unitless) before running the classical
partitioning-around-medoids algorithm.  Dunn and silhouette indices score
candidate blends and cluster counts.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .copulas import CopulaEvolution, fit_copula_evolution, get_family, theta_path
from .errors import NumericError
from .panels import OptimizerSettings, RegionMeta

__all__ = [
    "PairFit",
    "DissimilarityMatrix",
    "ClusterResult",
    "fit_all_pairs",
    "copula_pair_dissimilarity",
    "pairwise_dissimilarities",
    "aggregate_to_divisions",
    "haversine",
    "spatial_distance_matrix",
    "combine",
    "pam",
    "dunn_index",
    "silhouette",
    "select_beta_and_k",
    "EARTH_RADIUS_KM",
]

EARTH_RADIUS_KM = 6371.0

# Attainable Kendall's-tau range per family (closed under the link).
_TAU_BOUNDS = {
    "independence": (0.0, 0.0),
    "clayton": (0.0, 1.0),
    "gumbel": (0.0, 1.0),
    "joe": (0.0, 1.0),
    "frank": (-1.0, 1.0),
    "gaussian": (-1.0, 1.0),
}


def _freeze(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PairFit:
    """Fitted conditional copula for one region pair.

    ``thetas`` and ``taus`` are the parameter and Kendall's-tau trajectories
    implied by the fitted evolution over the observation window.
    """

    pair: Tuple[int, int]
    evolution: CopulaEvolution
    thetas: np.ndarray
    taus: np.ndarray
    loglik: float = float("nan")
    converged: bool = True

    def __post_init__(self):
        i, j = self.pair
        if not i < j:
            raise ValueError(f"pair must be ordered (i < j), got {self.pair}")
        object.__setattr__(self, "pair", (int(i), int(j)))
        object.__setattr__(self, "thetas", _freeze(self.thetas))
        object.__setattr__(self, "taus", _freeze(self.taus))
        if self.thetas.shape != self.taus.shape:
            raise ValueError("theta and tau paths must have equal length")
        lo, hi = _TAU_BOUNDS.get(self.evolution.family, (-1.0, 1.0))
        if self.taus.size and (
            self.taus.min() < lo - 1e-8 or self.taus.max() > hi + 1e-8
        ):
            raise ValueError(
                f"tau path leaves the attainable range [{lo}, {hi}] "
                f"for family '{self.evolution.family}'"
            )


@dataclass(frozen=True)
class DissimilarityMatrix:
    """Symmetric nonnegative zero-diagonal matrix over regions.

    ``kind`` records the provenance of the entries; ``beta`` is set on
    combined matrices only.
    """

    values: np.ndarray
    kind: str
    beta: Optional[float] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"dissimilarity matrix must be square, got {v.shape}")
        if self.kind not in ("copula", "spatial", "combined"):
            raise ValueError(f"unknown matrix kind '{self.kind}'")
        if not np.allclose(v, v.T, atol=1e-12):
            raise ValueError("dissimilarity matrix must be symmetric")
        if np.any(np.diag(v) != 0.0):
            raise ValueError("dissimilarity matrix must have a zero diagonal")
        if v.size and v.min() < 0.0:
            raise ValueError("dissimilarity entries must be nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ClusterResult:
    """Output of one PAM run plus its validity indices."""

    n_clusters: int
    medoids: Tuple[int, ...]
    assignment: np.ndarray
    total_cost: float
    dunn: float
    silhouette_mean: float
    beta: Optional[float] = None

    def __post_init__(self):
        a = np.array(self.assignment, dtype=int, copy=True)
        a.flags.writeable = False
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "medoids", tuple(int(m) for m in self.medoids))


def fit_all_pairs(
    u_panel: np.ndarray,
    x_panel: np.ndarray,
    family,
    settings: Optional[OptimizerSettings] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[PairFit]:
    """Fit the conditional copula to every region pair.

    Returns one :class:`PairFit` per pair (i, j), i < j, in lexicographic
    order.  A pair whose fit fails outright is dropped with a warning rather
    than aborting the whole sweep.
    """
    u_panel = np.asarray(u_panel, dtype=float)
    if u_panel.ndim != 2 or u_panel.shape[0] < 2:
        raise ValueError(f"u_panel must be (D, T) with D >= 2, got {u_panel.shape}")
    if rng is None:
        rng = np.random.default_rng(0)
    fam = get_family(family)
    fits = []
    for i, j in itertools.combinations(range(u_panel.shape[0]), 2):
        try:
            evo, ll, _, conv = fit_copula_evolution(
                u_panel[[i, j]], x_panel, fam.name, settings=settings, rng=rng
            )
        except NumericError as err:
            warnings.warn(f"copula fit for pair ({i}, {j}) failed and is excluded: {err}")
            continue
        thetas = theta_path(evo, x_panel)
        taus = np.array([fam.tau(t) for t in thetas])
        fits.append(PairFit((i, j), evo, thetas, taus, loglik=ll, converged=conv))
    return fits


def copula_pair_dissimilarity(a: PairFit, b: PairFit) -> float:
    """Average absolute gap between two pairs' Kendall's-tau trajectories."""
    if a.taus.shape != b.taus.shape:
        raise ValueError(
            f"tau paths have different lengths ({a.taus.size} vs {b.taus.size})"
        )
    return float(np.mean(np.abs(a.taus - b.taus)))


def pairwise_dissimilarities(fits: Sequence[PairFit]) -> Dict[tuple, float]:
    """Dissimilarity between every two distinct fitted pairs.

    Keys are ``(pair_a, pair_b)`` with ``pair_a < pair_b`` lexicographically.
    """
    out = {}
    for fa, fb in itertools.combinations(sorted(fits, key=lambda f: f.pair), 2):
        out[(fa.pair, fb.pair)] = copula_pair_dissimilarity(fa, fb)
    return out


def aggregate_to_divisions(pair_dissims: Dict[tuple, float], n_regions: int) -> DissimilarityMatrix:
    """Roll pair-level dissimilarities up to a region-level matrix.

    Entry (i, j) is the maximum dissimilarity over all comparisons between a
    pair containing region i and a *distinct* pair containing region j.  With
    only two regions there is a single pair and no distinct comparison; the
    off-diagonal entry is then defined as 0 and flagged with a warning.
    """
    lookup: Dict[tuple, float] = {}
    pairs_of: Dict[int, set] = {r: set() for r in range(n_regions)}
    for (pa, pb), v in pair_dissims.items():
        pa, pb = tuple(pa), tuple(pb)
        if v < 0:
            raise ValueError(f"negative pair dissimilarity for ({pa}, {pb})")
        lookup[(pa, pb)] = float(v)
        lookup[(pb, pa)] = float(v)
        for p in (pa, pb):
            for r in p:
                if r not in pairs_of:
                    raise ValueError(f"pair {p} references region {r} >= D={n_regions}")
                pairs_of[r].add(p)
    out = np.zeros((n_regions, n_regions))
    for i in range(n_regions):
        for j in range(i + 1, n_regions):
            best = -1.0
            for pa in pairs_of[i]:
                for pb in pairs_of[j]:
                    if pa == pb:
                        continue
                    if (pa, pb) not in lookup:
                        raise ValueError(f"missing pair dissimilarity for ({pa}, {pb})")
                    best = max(best, lookup[(pa, pb)])
            if best < 0.0:
                warnings.warn(
                    f"regions {i} and {j} admit no distinct pair comparison; "
                    "their copula dissimilarity is set to 0"
                )
                best = 0.0
            out[i, j] = out[j, i] = best
    return DissimilarityMatrix(out, kind="copula")


def haversine(a: RegionMeta, b: RegionMeta) -> float:
    """Great-circle distance in kilometers between two region centroids."""
    phi1 = math.radians(a.latitude)
    phi2 = math.radians(b.latitude)
    dphi = phi2 - phi1
    dlam = math.radians(b.longitude - a.longitude)
    s = math.sin(0.5 * dphi) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(0.5 * dlam) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


def spatial_distance_matrix(regions: Sequence[RegionMeta]) -> DissimilarityMatrix:
    """Pairwise great-circle distances for a list of regions."""
    D = len(regions)
    out = np.zeros((D, D))
    for i in range(D):
        for j in range(i + 1, D):
            out[i, j] = out[j, i] = haversine(regions[i], regions[j])
    return DissimilarityMatrix(out, kind="spatial")


def _as_values(matrix) -> np.ndarray:
    if isinstance(matrix, DissimilarityMatrix):
        return matrix.values
    return np.asarray(matrix, dtype=float)


def _minmax_offdiag(values: np.ndarray, label: str) -> np.ndarray:
    """Scale off-diagonal entries to [0, 1]; a flat component drops out."""
    D = values.shape[0]
    if D < 2:
        return np.zeros_like(values)
    mask = ~np.eye(D, dtype=bool)
    lo, hi = values[mask].min(), values[mask].max()
    if hi - lo <= 1e-300:
        warnings.warn(
            f"all off-diagonal {label} dissimilarities are equal; "
            "that component contributes nothing to the blend"
        )
        return np.zeros_like(values)
    out = (values - lo) / (hi - lo)
    np.fill_diagonal(out, 0.0)
    return out


def combine(spatial, copula, beta: float) -> DissimilarityMatrix:
    """Blend normalized spatial and copula matrices with weight ``beta``.

    Both inputs are min-max normalized over their off-diagonal entries so
    ``beta`` weighs comparable [0, 1] scales; ``beta = 1`` keeps only the
    spatial component, ``beta = 0`` only the copula component.
    """
    sv = _as_values(spatial)
    cv = _as_values(copula)
    if sv.shape != cv.shape:
        raise ValueError(f"matrix shapes differ: {sv.shape} vs {cv.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    sn = _minmax_offdiag(sv, "spatial")
    cn = _minmax_offdiag(cv, "copula")
    return DissimilarityMatrix(beta * sn + (1.0 - beta) * cn, kind="combined", beta=beta)


def _assignment_cost(values: np.ndarray, medoids: Sequence[int]) -> float:
    return float(values[:, list(medoids)].min(axis=1).sum())


def pam(matrix, n_clusters: int, rng: Optional[np.random.Generator] = None) -> ClusterResult:
    """Partition regions around ``n_clusters`` medoids (BUILD + SWAP).

    BUILD seeds medoids greedily (each new medoid is the point whose
    promotion lowers total cost the most); SWAP then applies the single best
    medoid/non-medoid exchange until no exchange lowers the cost.  The
    procedure is deterministic; ``rng`` is accepted for interface stability
    but unused.  Dunn and silhouette are filled in for ``n_clusters >= 2``
    and are NaN for a single cluster.
    """
    values = _as_values(matrix)
    D = values.shape[0]
    if not 1 <= n_clusters <= D:
        raise ValueError(f"n_clusters must lie in [1, {D}], got {n_clusters}")

    # BUILD
    medoids = [int(np.argmin(values.sum(axis=1)))]
    while len(medoids) < n_clusters:
        current = values[:, medoids].min(axis=1)
        best_c, best_cost = -1, np.inf
        for c in range(D):
            if c in medoids:
                continue
            cost = float(np.minimum(current, values[:, c]).sum())
            if cost < best_cost - 1e-15:
                best_c, best_cost = c, cost
        medoids.append(best_c)

    # SWAP: apply the best improving exchange, repeat to a local optimum.
    cost = _assignment_cost(values, medoids)
    while True:
        best_swap, best_cost = None, cost
        for mi, m in enumerate(medoids):
            for h in range(D):
                if h in medoids:
                    continue
                trial = list(medoids)
                trial[mi] = h
                c = _assignment_cost(values, trial)
                if c < best_cost - 1e-12:
                    best_swap, best_cost = (mi, h), c
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]
        assert best_cost <= cost + 1e-12, "PAM swap increased total cost"
        cost = best_cost

    medoids = sorted(medoids)
    assignment = np.argmin(values[:, medoids], axis=1)
    for k, m in enumerate(medoids):
        assignment[m] = k
    if n_clusters >= 2:
        dunn = dunn_index(values, assignment)
        sil_mean = silhouette(values, assignment)[1]
    else:
        dunn, sil_mean = float("nan"), float("nan")
    beta = matrix.beta if isinstance(matrix, DissimilarityMatrix) else None
    return ClusterResult(
        n_clusters=n_clusters,
        medoids=tuple(medoids),
        assignment=assignment,
        total_cost=cost,
        dunn=dunn,
        silhouette_mean=sil_mean,
        beta=beta,
    )


def dunn_index(matrix, assignment) -> float:
    """Smallest between-cluster distance over largest within-cluster diameter.

    When every cluster is a singleton (all diameters zero) the index is
    defined as ``+inf`` and a warning flags the degenerate geometry.
    """
    values = _as_values(matrix)
    assignment = np.asarray(assignment, dtype=int)
    labels = np.unique(assignment)
    if labels.size < 2:
        raise ValueError("Dunn index requires at least two clusters")
    same = assignment[:, None] == assignment[None, :]
    off = ~np.eye(values.shape[0], dtype=bool)
    within = values[same & off]
    between = values[~same]
    max_diameter = float(within.max()) if within.size else 0.0
    min_between = float(between.min())
    if max_diameter == 0.0:
        warnings.warn("all cluster diameters are zero; Dunn index is infinite")
        return math.inf
    return min_between / max_diameter


def silhouette(matrix, assignment) -> Tuple[np.ndarray, float]:
    """Per-point silhouette widths and their mean.

    Points in singleton clusters score 0 by convention.
    """
    values = _as_values(matrix)
    assignment = np.asarray(assignment, dtype=int)
    labels = np.unique(assignment)
    if labels.size < 2:
        raise ValueError("silhouette requires at least two clusters")
    D = values.shape[0]
    scores = np.zeros(D)
    for i in range(D):
        own = np.flatnonzero(assignment == assignment[i])
        if own.size == 1:
            continue
        a = values[i, own].sum() / (own.size - 1)
        b = min(
            values[i, assignment == lab].mean()
            for lab in labels
            if lab != assignment[i]
        )
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return scores, float(scores.mean())


def select_beta_and_k(
    spatial,
    copula,
    beta_grid: Sequence[float],
    k_candidates: Sequence[int],
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, int, ClusterResult]:
    """Pick the cluster count, then the blend weight, then refit.

    The cluster count maximizes mean silhouette on the half-and-half blend
    (``beta = 0.5``); the blend weight then maximizes the Dunn index at that
    cluster count, ties going to the smaller ``beta``.  Returns
    ``(beta, n_clusters, result)`` with ``result`` from a final PAM run at
    the selected pair.
    """
    if len(beta_grid) == 0 or len(k_candidates) == 0:
        raise ValueError("beta_grid and k_candidates must be non-empty")
    reference = combine(spatial, copula, 0.5)
    best_k, best_sil = None, -np.inf
    for k in sorted(set(int(k) for k in k_candidates)):
        res = pam(reference, k, rng)
        if np.isfinite(res.silhouette_mean) and res.silhouette_mean > best_sil:
            best_k, best_sil = k, res.silhouette_mean
    if best_k is None:
        raise ValueError("no candidate cluster count admits a silhouette score")
    best_beta, best_dunn = None, -np.inf
    for beta in sorted(set(float(b) for b in beta_grid)):
        res = pam(combine(spatial, copula, beta), best_k, rng)
        if res.dunn > best_dunn:
            best_beta, best_dunn = beta, res.dunn
    final = pam(combine(spatial, copula, best_beta), best_k, rng)
    return best_beta, best_k, final
