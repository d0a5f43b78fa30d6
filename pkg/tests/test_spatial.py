import itertools
import math

import numpy as np
import pytest
from scipy import stats

from excessmort import errors
from excessmort.spatial import (
    bivariate_lisa,
    build_weights,
    classify_clusters,
    global_bivariate_moran,
    global_moran_test,
    local_bivariate_moran,
    min_connectivity_threshold,
    permutation_pvalues,
    significance_tier,
    spatial_lag,
    standardize,
    weights_from_matrix,
)


def random_connected_weights(rng, n):
    """Random nonnegative weights, zero diagonal, at least one neighbor per row."""
    raw = rng.uniform(0.0, 1.0, size=(n, n)) * (rng.random((n, n)) < 0.5)
    np.fill_diagonal(raw, 0.0)
    for i in range(n):
        if raw[i].sum() == 0.0:
            j = (i + 1) % n
            raw[i, j] = rng.uniform(0.5, 1.0)
    return weights_from_matrix(raw)


def dense_moran(zx, zy, dense):
    """Independent double-loop evaluation of the global statistic."""
    n = len(zx)
    s0 = dense.sum()
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += dense[i, j] * zx[i] * zy[j]
    return acc / s0


def dense_local(zx, zy, dense):
    n = len(zx)
    out = np.zeros(n)
    for i in range(n):
        for j in range(n):
            out[i] += dense[i, j] * zy[j]
        out[i] *= zx[i]
    return out


def cycle_weights(n):
    raw = np.zeros((n, n))
    for i in range(n):
        raw[i, (i - 1) % n] = 1.0
        raw[i, (i + 1) % n] = 1.0
    return weights_from_matrix(raw)


class TestMinConnectivityThreshold:
    def test_collinear(self):
        assert min_connectivity_threshold([[0, 0], [1, 0], [3, 0]]) == pytest.approx(2.0)

    def test_two_points(self):
        assert min_connectivity_threshold([[0, 0], [5, 0]]) == pytest.approx(5.0)

    def test_unit_square(self):
        pts = [[0, 0], [1, 0], [0, 1], [1, 1]]
        assert min_connectivity_threshold(pts) == pytest.approx(1.0)

    def test_fewer_than_two(self):
        with pytest.raises(errors.FewerThanTwoUnits):
            min_connectivity_threshold([[1, 1]])

    def test_is_the_minimal_full_connectivity_band(self, rng):
        pts = rng.uniform(0, 50, size=(30, 2))
        t = min_connectivity_threshold(pts)
        with pytest.warns(UserWarning, match="neighborless"):
            below = build_weights(pts, t * 0.999)
        assert below.neighborless
        at = build_weights(pts, t)
        assert not at.neighborless


class TestBuildWeights:
    def test_single_neighbor_row(self):
        w = build_weights(np.array([[0.0, 0.0], [2.0, 0.0]]), 5.0)
        assert np.allclose(w.matrix.toarray(), [[0, 1], [1, 0]])

    def test_collinear_hand_computation(self):
        w = build_weights(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), 1.5)
        expected = np.array([[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])
        assert np.allclose(w.matrix.toarray(), expected)

    def test_inverse_distance_before_standardization(self):
        # neighbors at 1 km and 4 km: raw 1 and 0.25 -> standardized 0.8, 0.2
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [-4.0, 0.0]])
        w = build_weights(pts, 10.0)
        row = w.matrix.toarray()[0]
        assert row[1] == pytest.approx(0.8)
        assert row[2] == pytest.approx(0.2)

    def test_zero_diagonal_and_row_sums(self, rng):
        pts = rng.uniform(0, 20, size=(25, 2))
        w = build_weights(pts, min_connectivity_threshold(pts))
        dense = w.matrix.toarray()
        assert np.all(dense.diagonal() == 0.0)
        assert np.allclose(dense.sum(axis=1), 1.0, atol=1e-12)

    def test_coincident_centroids(self):
        pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        with pytest.raises(errors.CoincidentCentroids):
            build_weights(pts, 5.0)

    def test_neighborless_units_reported(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [50.0, 50.0]])
        with pytest.warns(UserWarning, match="C"):
            w = build_weights(pts, 2.0, unit_ids=("A", "B", "C"))
        assert w.neighborless == (2,)


class TestStandardize:
    def test_already_standardized(self):
        assert np.allclose(standardize([1.0, -1.0]), [1.0, -1.0])

    def test_zero_variance(self):
        with pytest.raises(errors.ZeroVariance):
            standardize([10.0, 10.0, 10.0])

    def test_population_sd(self):
        assert np.allclose(standardize([0.0, 2.0]), [-1.0, 1.0])

    def test_moments(self, rng):
        z = standardize(rng.normal(size=100))
        assert abs(z.mean()) < 1e-12
        assert abs((z**2).mean() - 1.0) < 1e-12


class TestSpatialLag:
    def test_constant_vector(self, rng):
        w = random_connected_weights(rng, 9)
        lag = spatial_lag(w, np.full(9, 3.7))
        assert np.allclose(lag, 3.7)

    def test_two_node_swap(self):
        w = weights_from_matrix([[0, 1], [1, 0]])
        assert np.allclose(spatial_lag(w, [1.0, -1.0]), [-1.0, 1.0])

    def test_four_cycle_cancellation(self):
        w = cycle_weights(4)
        lag = spatial_lag(w, [1.0, 1.0, -1.0, -1.0])
        # neighbors of each node carry opposite values in the 4-cycle
        assert np.allclose(lag, 0.0, atol=1e-15)

    def test_dimension_mismatch(self):
        w = weights_from_matrix([[0, 1], [1, 0]])
        with pytest.raises(errors.DimensionMismatch):
            spatial_lag(w, [1.0, 2.0, 3.0])


class TestGlobalMoran:
    def test_two_node_anticorrelated_values(self):
        w = weights_from_matrix([[0, 1], [1, 0]])
        assert global_bivariate_moran([1, -1], [-1, 1], w) == pytest.approx(1.0)

    def test_two_node_same_values(self):
        w = weights_from_matrix([[0, 1], [1, 0]])
        assert global_bivariate_moran([1, -1], [1, -1], w) == pytest.approx(-1.0)

    def test_four_cycle_zero(self):
        w = cycle_weights(4)
        z = [1.0, 1.0, -1.0, -1.0]
        assert global_bivariate_moran(z, z, w) == pytest.approx(0.0, abs=1e-15)

    def test_symmetric_weights_commute(self, rng):
        for n in (4, 6, 9):
            w = cycle_weights(n)  # row-standardized cycle stays symmetric
            zx = standardize(rng.normal(size=n))
            zy = standardize(rng.normal(size=n))
            assert global_bivariate_moran(zx, zy, w) == pytest.approx(
                global_bivariate_moran(zy, zx, w), abs=1e-12
            )

    def test_cauchy_schwarz_bound(self, rng):
        for _ in range(25):
            n = int(rng.integers(4, 12))
            w = random_connected_weights(rng, n)
            zx = standardize(rng.normal(size=n))
            zy = standardize(rng.normal(size=n))
            stat = global_bivariate_moran(zx, zy, w)
            lag = spatial_lag(w, zy)
            bound = math.sqrt((zx**2).mean() * (lag**2).mean())
            assert abs(stat) <= bound + 1e-12


class TestLocalMoran:
    def test_two_node_example(self):
        w = weights_from_matrix([[0, 1], [1, 0]])
        assert np.allclose(local_bivariate_moran([1, -1], [1, -1], w), [-1.0, -1.0])

    def test_local_mean_equals_global(self, rng):
        for _ in range(30):
            n = int(rng.integers(3, 10))
            w = random_connected_weights(rng, n)
            zx = standardize(rng.normal(size=n))
            zy = standardize(rng.normal(size=n))
            local = local_bivariate_moran(zx, zy, w)
            assert local.mean() == pytest.approx(
                global_bivariate_moran(zx, zy, w), abs=1e-12
            )

    def test_zero_focal_value(self):
        w = weights_from_matrix([[0, 1, 1], [1, 0, 1], [1, 1, 0]])
        local = local_bivariate_moran([0.0, 1.0, -1.0], [1.0, 1.0, -1.0], w)
        assert local[0] == 0.0

    def test_matches_dense_loops(self, rng):
        for _ in range(100):
            n = int(rng.integers(3, 9))
            w = random_connected_weights(rng, n)
            dense = w.matrix.toarray()
            zx = standardize(rng.normal(size=n))
            zy = standardize(rng.normal(size=n))
            assert global_bivariate_moran(zx, zy, w) == pytest.approx(
                dense_moran(zx, zy, dense), abs=1e-12
            )
            assert np.allclose(
                local_bivariate_moran(zx, zy, w), dense_local(zx, zy, dense), atol=1e-12
            )


def enumeration_local_pvalue(zx, zy, w, i):
    """Exact conditional p for unit i over all (n-1)! arrangements."""
    n = w.n
    cols, vals = w.neighbors(i)
    pool = np.delete(zy, i)
    slots = np.where(cols < i, cols, cols - 1)
    observed = zx[i] * float(vals @ zy[cols])
    stats_all = []
    for arr in itertools.permutations(range(n - 1)):
        arranged = pool[np.asarray(arr)]
        stats_all.append(zx[i] * float(vals @ arranged[slots]))
    stats_all = np.asarray(stats_all)
    if observed >= 0:
        count = int((stats_all >= observed).sum())
    else:
        count = int((stats_all <= observed).sum())
    return count / math.factorial(n - 1)


class TestPermutationInference:
    def test_floor_pvalue_when_statistic_is_extreme(self):
        # focal unit carries the only large zy neighbor arrangement
        zx = np.array([2.0, 1.0, -1.0, -1.0, -1.0])
        zy = np.array([0.0, 3.0, -1.0, -1.0, -1.0])
        raw = np.zeros((5, 5))
        raw[0, 1] = 1.0  # unit 0 looks only at unit 1, the maximum
        for i in range(1, 5):
            raw[i, (i + 1) % 5 or 1] = 1.0
            raw[i, 0] = 1.0
        w = weights_from_matrix(raw)
        n_perm = math.factorial(4) - 1
        local_p, _ = permutation_pvalues(zx, zy, w, n_perm=n_perm, exhaustive=True)
        # unit 0: only arrangements placing 3.0 at position 1 tie the max
        assert local_p[0] == enumeration_local_pvalue(zx, zy, w, 0)

    def test_exhaustive_matches_enumeration(self, rng):
        for n in (4, 5):
            pts = rng.uniform(0, 10, size=(n, 2))
            w = build_weights(pts, min_connectivity_threshold(pts))
            zx = standardize(rng.normal(size=n))
            zy = standardize(rng.normal(size=n))
            n_perm = math.factorial(n - 1) - 1
            local_p, _ = permutation_pvalues(zx, zy, w, n_perm=n_perm, exhaustive=True)
            for i in range(n):
                assert local_p[i] == pytest.approx(
                    enumeration_local_pvalue(zx, zy, w, i), abs=1e-15
                )

    def test_three_node_path_exact(self):
        # path 0-1-2; two arrangements of the two non-focal values
        raw = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
        w = weights_from_matrix(raw)
        zx = np.array([1.0, 0.5, -1.5])
        zy = np.array([0.5, 1.0, -1.5])
        local_p, _ = permutation_pvalues(zx, zy, w, n_perm=1, exhaustive=True)
        for i in range(3):
            assert local_p[i] == enumeration_local_pvalue(zx, zy, w, i)

    def test_degenerate_pool_gives_p_one(self):
        zx = np.array([1.0, -0.5, -0.5, 0.0])
        zy = np.array([5.0, 1.0, 1.0, 1.0])  # constant among non-focal of unit 0
        raw = np.zeros((4, 4))
        raw[0, 1] = raw[1, 0] = raw[1, 2] = raw[2, 3] = raw[3, 0] = 1.0
        raw[2, 1] = 1.0
        w = weights_from_matrix(raw)
        local_p, _ = permutation_pvalues(zx, zy, w, n_perm=30, master_seed=3)
        assert local_p[0] == 1.0

    def test_pseudo_p_floor_and_ceiling(self, rng):
        n = 12
        w = random_connected_weights(rng, n)
        zx = standardize(rng.normal(size=n))
        zy = standardize(rng.normal(size=n))
        local_p, global_p = permutation_pvalues(zx, zy, w, n_perm=99, master_seed=1)
        assert np.all(local_p >= 1 / 100) and np.all(local_p <= 1.0)
        assert 1 / 100 <= global_p <= 1.0

    def test_worker_count_invariance(self, rng):
        n = 10
        w = random_connected_weights(rng, n)
        zx = standardize(rng.normal(size=n))
        zy = standardize(rng.normal(size=n))
        p1, g1 = permutation_pvalues(zx, zy, w, n_perm=49, master_seed=7, n_workers=1)
        p4, g4 = permutation_pvalues(zx, zy, w, n_perm=49, master_seed=7, n_workers=4)
        assert np.array_equal(p1, p4)
        assert g1 == g4

    def test_invalid_perm_count(self, rng):
        w = random_connected_weights(rng, 4)
        with pytest.raises(errors.InvalidPermCount):
            permutation_pvalues([1, -1, 1, -1], [1, -1, 1, -1], w, n_perm=0)

    def test_null_pvalues_near_uniform(self):
        # fixed-direction (upper-tail) pseudo p is exchangeable-uniform under
        # the null; recover it from the sign-directed p via the tie-free
        # complement p_upper = 1 + 1/(R+1) - p_directed when I_obs < 0
        n, n_perm = 20, 99
        draw = np.random.default_rng(2)
        w = random_connected_weights(draw, n)
        upper = []
        for rep in range(200):
            zx = standardize(draw.normal(size=n))
            zy = standardize(draw.normal(size=n))
            stat = global_bivariate_moran(zx, zy, w)
            _, p = permutation_pvalues(zx, zy, w, n_perm=n_perm, master_seed=rep)
            upper.append(p if stat >= 0 else 1 + 1 / (n_perm + 1) - p)
        ks = stats.kstest(np.asarray(upper), "uniform")
        assert ks.pvalue > 0.01


class TestClassification:
    def test_hh(self):
        out = classify_clusters([1.2], [0.8], [0.01])
        assert out[0] == "HH"

    def test_hl_significant(self):
        out = classify_clusters([1.5], [-0.4], [0.04])
        assert out[0] == "HL"

    def test_insignificant_is_ns(self):
        out = classify_clusters([1.5], [-0.4], [0.20])
        assert out[0] == "NS"

    def test_lh_and_ll(self):
        out = classify_clusters([-1.0, -1.0], [0.5, -0.5], [0.01, 0.01])
        assert out.tolist() == ["LH", "LL"]

    def test_exact_zero_ties_are_ns(self):
        out = classify_clusters([0.0, 1.0], [1.0, 0.0], [0.001, 0.001])
        assert out.tolist() == ["NS", "NS"]

    def test_tiers(self):
        assert significance_tier(0.004) == "0.01"
        assert significance_tier(0.001) == "0.001"
        assert significance_tier(0.05) == "0.05"
        assert significance_tier(0.2) == "none"


class TestLisaRecords:
    def test_end_to_end_labels(self, rng):
        pts = rng.uniform(0, 10, size=(8, 2))
        w = build_weights(
            pts, min_connectivity_threshold(pts), unit_ids=tuple("ABCDEFGH")
        )
        x = rng.normal(size=8)
        y = rng.normal(size=8)
        records = bivariate_lisa(x, y, w, n_perm=99, master_seed=2)
        assert [r.unit_id for r in records] == list("ABCDEFGH")
        for r in records:
            assert r.cluster in {"HH", "HL", "LH", "LL", "NS"}
            assert (r.cluster == "NS") == (r.pseudo_p > 0.05) or (
                r.cluster == "NS"
            )  # zeros also map to NS
            assert r.tier in {"0.05", "0.01", "0.001", "none"}

    def test_global_test_result(self, rng):
        pts = rng.uniform(0, 10, size=(10, 2))
        w = build_weights(pts, min_connectivity_threshold(pts))
        res = global_moran_test(rng.normal(size=10), rng.normal(size=10), w, n_perm=99)
        assert res.n_permutations == 99
        assert 0.01 <= res.pseudo_p <= 1.0
