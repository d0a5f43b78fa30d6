"""Spatial weights and bivariate spatial autocorrelation.

Weights are inverse-distance within a threshold band, row-standardized with
a zero diagonal. The global statistic is

    I = (1 / S0) * sum_ij w_ij * zx_i * zy_j,      S0 = sum_ij w_ij,

and the local statistic at unit i is ``zx_i * lag(zy)_i``; with every row
standardized to sum one, S0 = n and the mean of the local values equals the
global value. Significance uses conditional permutation with the
(M + 1) / (R + 1) pseudo p-value, one-sided toward the sign of the observed
statistic. Permutation r for unit i draws from a generator seeded with
(master_seed, i, r) — the global test uses slot n — so p-values do not
depend on worker count or evaluation order.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ._parallel import run_chunked
from .errors import (
    CoincidentCentroids,
    DimensionMismatch,
    FewerThanTwoUnits,
    InvalidPermCount,
    ZeroVariance,
    ZeroWeights,
)

CLUSTER_LABELS = ("HH", "HL", "LH", "LL", "NS")
DEFAULT_TIERS = (0.05, 0.01, 0.001)


@dataclass(eq=False)
class SpatialWeights:
    """Row-standardized sparse weights with zero diagonal."""

    matrix: sparse.csr_matrix
    threshold_km: float | None = None
    row_standardized: bool = True
    unit_ids: tuple[str, ...] | None = None
    neighborless: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def s0(self) -> float:
        return float(self.matrix.sum())

    def lag(self, z: np.ndarray) -> np.ndarray:
        return self.matrix @ z

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(column indices, weights) of row i."""
        start, stop = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[start:stop], self.matrix.data[start:stop]


def min_connectivity_threshold(centroids) -> float:
    """Smallest distance band that leaves no unit neighborless.

    Equals the largest nearest-neighbor distance over all units.
    """
    pts = np.asarray(centroids, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise FewerThanTwoUnits("need at least two centroids")
    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(dist[:, 1].max())


def build_weights(centroids, threshold_km: float, unit_ids=None) -> SpatialWeights:
    """Inverse-distance weights within the band, then row standardization.

    ``w_ij = 1 / d_ij`` for ``0 < d_ij <= threshold_km``, zero elsewhere and
    on the diagonal. Rows are rescaled to sum to one; rows with no neighbor
    inside the band are left all-zero and reported through a warning and
    the ``neighborless`` attribute.
    """
    pts = np.asarray(centroids, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise FewerThanTwoUnits("need at least two centroids")
    if threshold_km <= 0:
        raise ValueError(f"threshold_km must be positive, got {threshold_km}")
    n = pts.shape[0]
    tree = cKDTree(pts)
    # tiny relative slack: the pair scan rounds distances differently from
    # the nearest-neighbor query, so an exact-boundary pair could drop out
    dist = tree.sparse_distance_matrix(
        tree, threshold_km * (1.0 + 1e-12), output_type="coo_matrix"
    )
    off_diag = dist.row != dist.col
    rows, cols, d = dist.row[off_diag], dist.col[off_diag], dist.data[off_diag]
    zero_d = d == 0.0
    if zero_d.any():
        i, j = int(rows[zero_d][0]), int(cols[zero_d][0])
        a = unit_ids[i] if unit_ids else i
        b = unit_ids[j] if unit_ids else j
        raise CoincidentCentroids(f"units {a!r} and {b!r} share a centroid")
    matrix = sparse.csr_matrix((1.0 / d, (rows, cols)), shape=(n, n))
    return _standardize_rows(matrix, threshold_km, unit_ids)


def weights_from_matrix(matrix, unit_ids=None, threshold_km=None) -> SpatialWeights:
    """Wrap an explicit nonnegative weight matrix (tests, custom bands)."""
    matrix = sparse.csr_matrix(np.asarray(matrix, dtype=float) if not sparse.issparse(matrix) else matrix)
    if matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"weight matrix must be square, got {matrix.shape}")
    if (matrix.data < 0).any():
        raise ValueError("weights must be nonnegative")
    if matrix.diagonal().any():
        raise ValueError("weight matrix must have a zero diagonal")
    return _standardize_rows(matrix, threshold_km, unit_ids)


def _standardize_rows(matrix, threshold_km, unit_ids) -> SpatialWeights:
    matrix = matrix.tocsr()
    matrix.eliminate_zeros()
    row_sums = np.asarray(matrix.sum(axis=1)).ravel()
    empty = np.flatnonzero(row_sums == 0.0)
    scale = np.where(row_sums > 0, row_sums, 1.0)
    inv = sparse.diags(1.0 / scale)
    std = (inv @ matrix).tocsr()
    if empty.size:
        names = (
            ", ".join(unit_ids[i] for i in empty)
            if unit_ids
            else ", ".join(str(i) for i in empty)
        )
        warnings.warn(f"neighborless unit(s) at threshold: {names}", stacklevel=3)
    return SpatialWeights(
        matrix=std,
        threshold_km=threshold_km,
        row_standardized=True,
        unit_ids=tuple(unit_ids) if unit_ids is not None else None,
        neighborless=tuple(int(i) for i in empty),
    )


def standardize(values) -> np.ndarray:
    """Z-scores against the population standard deviation (divide by n)."""
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise DimensionMismatch("need a 1-D vector of length >= 2")
    sd = x.std()  # population sd
    if sd == 0.0:
        raise ZeroVariance("cannot standardize a constant vector")
    return (x - x.mean()) / sd


def spatial_lag(w: SpatialWeights, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if len(z) != w.n:
        raise DimensionMismatch(f"vector length {len(z)} != {w.n} units")
    return w.lag(z)


def global_bivariate_moran(zx, zy, w: SpatialWeights) -> float:
    zx = np.asarray(zx, dtype=float)
    zy = np.asarray(zy, dtype=float)
    if len(zx) != w.n or len(zy) != w.n:
        raise DimensionMismatch("zx, zy must both match the weight matrix size")
    s0 = w.s0
    if s0 == 0.0:
        raise ZeroWeights("weight matrix has no nonzero entries")
    return float(zx @ (w.matrix @ zy) / s0)


def local_bivariate_moran(zx, zy, w: SpatialWeights) -> np.ndarray:
    zx = np.asarray(zx, dtype=float)
    zy = np.asarray(zy, dtype=float)
    if len(zx) != w.n or len(zy) != w.n:
        raise DimensionMismatch("zx, zy must both match the weight matrix size")
    return zx * (w.matrix @ zy)


def _count_extreme(observed: float, permuted: np.ndarray) -> int:
    """Permutation draws at least as extreme as observed, toward its sign."""
    if observed >= 0:
        return int((permuted >= observed).sum())
    return int((permuted <= observed).sum())


def _perm_stats_local(i, zx_i, pool, slots, weights, n_perm, master_seed, exhaustive):
    stats = np.empty(n_perm)
    if exhaustive:
        arrangements = itertools.islice(
            itertools.permutations(range(len(pool))), 1, n_perm + 1
        )
        for r, arr in enumerate(arrangements):
            stats[r] = zx_i * (weights @ pool[np.asarray(arr)[slots]])
    else:
        for r in range(n_perm):
            rng = np.random.default_rng((master_seed, i, r))
            perm = rng.permutation(len(pool))
            stats[r] = zx_i * (weights @ pool[perm[slots]])
    return stats


def _local_pvalue_range(start, stop, zx, zy, matrix, n_perm, master_seed, exhaustive):
    w = SpatialWeights(matrix=matrix)
    out = []
    for i in range(start, stop):
        cols, vals = w.neighbors(i)
        pool = np.delete(zy, i)
        slots = np.where(cols < i, cols, cols - 1)
        # same dot-product expression as the permuted statistics, so exact
        # ties (degenerate pools, symmetric data) compare consistently
        observed = zx[i] * (vals @ zy[cols])
        stats = _perm_stats_local(
            i, zx[i], pool, slots, vals, n_perm, master_seed, exhaustive
        )
        m = _count_extreme(observed, stats)
        out.append((m + 1) / (n_perm + 1))
    return out


def permutation_pvalues(
    zx,
    zy,
    w: SpatialWeights,
    n_perm: int = 999,
    master_seed: int = 0,
    n_workers: int = 1,
    exhaustive: bool = False,
) -> tuple[np.ndarray, float]:
    """Pseudo p-values for the local statistics and the global statistic.

    Local inference is conditional: unit i's own values and the weights stay
    fixed while the other units' zy values are shuffled across the non-focal
    positions. The global test permutes zy fully. With ``exhaustive=True``
    the shuffles enumerate every non-identity arrangement instead of being
    drawn (``n_perm`` must then be (n-1)!-1 locally and n!-1 globally),
    which reproduces exact enumeration p-values.
    """
    zx = np.asarray(zx, dtype=float)
    zy = np.asarray(zy, dtype=float)
    n = w.n
    if len(zx) != n or len(zy) != n:
        raise DimensionMismatch("zx, zy must both match the weight matrix size")
    local_perm = math.factorial(n - 1) - 1 if exhaustive else n_perm
    if not isinstance(n_perm, (int, np.integer)) or n_perm < 1:
        raise InvalidPermCount(f"n_perm must be a positive integer, got {n_perm}")
    if exhaustive and n_perm != local_perm:
        raise InvalidPermCount(
            f"exhaustive mode needs n_perm = (n-1)!-1 = {local_perm}, got {n_perm}"
        )

    local_p = np.asarray(
        run_chunked(
            _local_pvalue_range,
            n,
            n_workers,
            args=(zx, zy, w.matrix, local_perm, master_seed, exhaustive),
        )
    )

    if exhaustive:
        observed_global = global_bivariate_moran(zx, zy, w)
        global_perm = math.factorial(n) - 1
        stats = np.empty(global_perm)
        arrangements = itertools.islice(
            itertools.permutations(range(n)), 1, global_perm + 1
        )
        for r, arr in enumerate(arrangements):
            stats[r] = global_bivariate_moran(zx, zy[np.asarray(arr)], w)
        m = _count_extreme(observed_global, stats)
        global_p = (m + 1) / (global_perm + 1)
    else:
        _, global_p = _global_only(zx, zy, w, n_perm, master_seed)
    return local_p, float(global_p)


def classify_clusters(zx, lag_zy, pseudo_p, alpha: float = 0.05) -> np.ndarray:
    """HH/HL/LH/LL labels for significant units, NS otherwise.

    Exact zeros in either coordinate classify as NS.
    """
    zx = np.asarray(zx, dtype=float)
    lag_zy = np.asarray(lag_zy, dtype=float)
    pseudo_p = np.asarray(pseudo_p, dtype=float)
    if not len(zx) == len(lag_zy) == len(pseudo_p):
        raise DimensionMismatch("zx, lag_zy, pseudo_p must be aligned")
    significant = pseudo_p <= alpha
    out = np.full(len(zx), "NS", dtype="<U2")
    out[significant & (zx > 0) & (lag_zy > 0)] = "HH"
    out[significant & (zx > 0) & (lag_zy < 0)] = "HL"
    out[significant & (zx < 0) & (lag_zy > 0)] = "LH"
    out[significant & (zx < 0) & (lag_zy < 0)] = "LL"
    return out


def significance_tier(pseudo_p: float, tiers=DEFAULT_TIERS) -> str:
    """Strictest significance level met, as a label ('none' if p > max tier)."""
    for level in sorted(tiers):
        if pseudo_p <= level:
            return format(level, "g")
    return "none"


@dataclass(frozen=True)
class MoranResult:
    statistic: float
    n_permutations: int
    pseudo_p: float


@dataclass(frozen=True)
class LisaRecord:
    unit_id: str
    local_i: float
    pseudo_p: float
    cluster: str
    tier: str


def global_moran_test(
    x, y, w: SpatialWeights, n_perm: int = 999, master_seed: int = 0
) -> MoranResult:
    """Standardize raw values, compute global I, and test it by permutation."""
    zx, zy = standardize(x), standardize(y)
    statistic = global_bivariate_moran(zx, zy, w)
    _, global_p = _global_only(zx, zy, w, n_perm, master_seed)
    return MoranResult(statistic=statistic, n_permutations=n_perm, pseudo_p=global_p)


def _global_only(zx, zy, w, n_perm, master_seed):
    if not isinstance(n_perm, (int, np.integer)) or n_perm < 1:
        raise InvalidPermCount(f"n_perm must be a positive integer, got {n_perm}")
    observed = global_bivariate_moran(zx, zy, w)
    n = w.n
    stats = np.empty(n_perm)
    for r in range(n_perm):
        rng = np.random.default_rng((master_seed, n, r))
        stats[r] = global_bivariate_moran(zx, zy[rng.permutation(n)], w)
    m = _count_extreme(observed, stats)
    return observed, (m + 1) / (n_perm + 1)


def bivariate_lisa(
    x,
    y,
    w: SpatialWeights,
    n_perm: int = 999,
    master_seed: int = 0,
    alpha: float = 0.05,
    tiers=DEFAULT_TIERS,
    n_workers: int = 1,
) -> list[LisaRecord]:
    """Full local analysis on raw values: standardize, test, classify."""
    zx, zy = standardize(x), standardize(y)
    local_i = local_bivariate_moran(zx, zy, w)
    local_p, _ = permutation_pvalues(
        zx, zy, w, n_perm=n_perm, master_seed=master_seed, n_workers=n_workers
    )
    clusters = classify_clusters(zx, spatial_lag(w, zy), local_p, alpha=alpha)
    ids = w.unit_ids if w.unit_ids is not None else tuple(str(i) for i in range(w.n))
    return [
        LisaRecord(
            unit_id=ids[i],
            local_i=float(local_i[i]),
            pseudo_p=float(local_p[i]),
            cluster=str(clusters[i]),
            tier=significance_tier(float(local_p[i]), tiers),
        )
        for i in range(w.n)
    ]
