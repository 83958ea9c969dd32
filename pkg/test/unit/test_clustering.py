"""Unit tests for siot_trust.clustering."""

import itertools

import numpy as np
import pytest

from siot_trust.clustering import (
    FEATURE_PAIRS,
    ClusteringResult,
    ClusterLabelingError,
    InfeasibleClusteringError,
    TrustLabel,
    cluster_label_map,
    cost_curve,
    elbow_from_costs,
    elbow_select_k,
    kmeans,
    label_clusters,
    pairwise_scatter,
    read_labels,
    write_cost_curve,
    write_labels,
)
from siot_trust.features import FeatureTable
from siot_trust.graph import PairKey


def _blobs(seed, per_blob=20, spread=0.03, centres=None):
    """Three well separated blobs in the unit cube, one after another."""
    if centres is None:
        centres = [[0.2] * 4 for _ in range(3)]
        for index, centre in enumerate(centres):
            centre[index] = 0.8
    rng = np.random.default_rng(seed)
    points = [
        rng.normal(centre, spread, size=(per_blob, len(centre))) for centre in centres
    ]
    return np.clip(np.vstack(points), 0.0, 1.0)


def _brute_force_cost(data, k):
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(data)):
        assignment = np.array(labels)
        cost = 0.0
        for cluster in range(k):
            members = data[assignment == cluster]
            if len(members):
                cost += float(((members - members.mean(axis=0)) ** 2).sum())
        best = min(best, cost)
    return best


def _result(centroids, assignments=(0, 1, 2)):
    centroids = np.asarray(centroids, dtype=float)
    return ClusteringResult(
        k=len(centroids),
        centroids=centroids,
        assignments=np.asarray(assignments),
        cost=0.0,
        iterations=1,
        cost_history=(0.0,),
    )


class TestKMeans:
    """Tests for Lloyd's algorithm."""

    def test_recovers_blobs(self):
        data = _blobs(0)
        result = kmeans(data, 3, rng_seed=1, restarts=5)
        groups = result.assignments.reshape(3, 20)
        for group in groups:
            assert len(set(group)) == 1
        assert len({group[0] for group in groups}) == 3

    def test_cost_never_increases(self):
        for seed in range(100):
            data = np.random.default_rng(seed).random((30, 2))
            history = kmeans(data, 3, rng_seed=seed).cost_history
            assert all(
                later <= earlier + 1e-12
                for earlier, later in zip(history, history[1:], strict=False)
            )

    def test_samples_assigned_to_nearest_centroid(self):
        data = np.random.default_rng(7).random((50, 3))
        result = kmeans(data, 4, rng_seed=7, restarts=3)
        distances = ((data[:, None, :] - result.centroids[None]) ** 2).sum(axis=2)
        np.testing.assert_array_equal(result.assignments, distances.argmin(axis=1))
        assert result.cost == pytest.approx(distances.min(axis=1).sum())

    @pytest.mark.parametrize(("n", "k"), [(6, 2), (7, 3), (8, 3), (9, 3), (12, 2)])
    def test_matches_brute_force(self, n, k):
        centres = [[0.1, 0.1], [0.9, 0.15], [0.45, 0.9]]
        data = _blobs(n, per_blob=4, spread=0.05, centres=centres)[:n]
        result = kmeans(data, k, rng_seed=n, restarts=20)
        assert result.cost == pytest.approx(_brute_force_cost(data, k), rel=1e-9)

    def test_single_cluster_cost(self):
        data = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        result = kmeans(data, 1, rng_seed=0)
        assert result.cost == pytest.approx(2.0)
        np.testing.assert_allclose(result.centroids[0], [0.5, 0.5])

    def test_deterministic(self):
        data = _blobs(3)
        first = kmeans(data, 3, rng_seed=11, restarts=4)
        second = kmeans(data, 3, rng_seed=11, restarts=4)
        np.testing.assert_array_equal(first.assignments, second.assignments)
        assert first.cost == second.cost

    def test_workers_do_not_change_result(self):
        data = np.random.default_rng(5).random((80, 4))
        serial = kmeans(data, 3, rng_seed=2, restarts=6)
        threaded = kmeans(data, 3, rng_seed=2, restarts=6, workers=4)
        np.testing.assert_array_equal(serial.assignments, threaded.assignments)
        assert serial.cost == threaded.cost

    def test_k_zero_rejected(self):
        with pytest.raises(InfeasibleClusteringError, match="k must be >= 1"):
            kmeans(_blobs(0), 0, rng_seed=0)

    def test_k_above_distinct_samples_rejected(self):
        data = np.array([[0.5, 0.5], [0.5, 0.5], [0.1, 0.2]])
        with pytest.raises(InfeasibleClusteringError, match="2 distinct samples"):
            kmeans(data, 3, rng_seed=0)

    def test_out_of_range_values_rejected(self):
        with pytest.raises(InfeasibleClusteringError, match=r"in \[0, 1\]"):
            kmeans(np.array([[0.5, 1.5], [0.1, 0.2]]), 1, rng_seed=0)

    def test_empty_rejected(self):
        with pytest.raises(InfeasibleClusteringError, match="non-empty"):
            kmeans(np.zeros((0, 4)), 1, rng_seed=0)


class TestElbow:
    """Tests for cost curves and the knee selection."""

    def test_largest_second_difference(self):
        costs = {1: 10.0, 2: 6.0, 3: 2.0, 4: 1.8, 5: 1.7}
        assert elbow_from_costs(costs) == 3

    def test_ties_go_to_smaller_k(self):
        assert elbow_from_costs({1: 3.0, 2: 2.0, 3: 1.0, 4: 0.0}) == 2

    def test_no_interior_point(self):
        assert elbow_from_costs({1: 5.0, 2: 1.0}) == 1
        assert elbow_from_costs({4: 1.0}) == 4

    def test_cost_curve_is_non_increasing_on_blobs(self):
        costs = cost_curve(_blobs(2), 1, 6, rng_seed=2)
        assert list(costs) == [1, 2, 3, 4, 5, 6]
        values = list(costs.values())
        assert all(b <= a + 1e-9 for a, b in zip(values, values[1:], strict=False))

    def test_three_blobs_give_three(self):
        assert elbow_select_k(_blobs(4, per_blob=40), 1, 8, rng_seed=4) == 3

    def test_invalid_range(self):
        with pytest.raises(InfeasibleClusteringError, match="invalid k range"):
            cost_curve(_blobs(0), 3, 2)


class TestLabeling:
    """Tests for mapping clusters onto trust labels."""

    def test_order_by_centroid_norm(self):
        mapping = cluster_label_map(_result([[0.9, 0.9], [0.1, 0.1], [0.5, 0.5]]))
        assert mapping == {
            0: TrustLabel.TRUSTWORTHY,
            1: TrustLabel.UNTRUSTWORTHY,
            2: TrustLabel.NEUTRAL,
        }

    def test_equal_norms_keep_index_order(self):
        mapping = cluster_label_map(_result([[0.1, 0.0], [0.0, 0.1], [1.0, 1.0]]))
        assert mapping[0] is TrustLabel.UNTRUSTWORTHY
        assert mapping[1] is TrustLabel.NEUTRAL
        assert mapping[2] is TrustLabel.TRUSTWORTHY

    def test_label_values(self):
        assert [int(label) for label in TrustLabel] == [0, 1, 2]

    def test_label_clusters_follows_assignments(self):
        result = _result([[0.9, 0.9], [0.1, 0.1], [0.5, 0.5]], [1, 1, 0, 2])
        assert label_clusters(result) == [
            TrustLabel.UNTRUSTWORTHY,
            TrustLabel.UNTRUSTWORTHY,
            TrustLabel.TRUSTWORTHY,
            TrustLabel.NEUTRAL,
        ]

    def test_needs_three_clusters(self):
        with pytest.raises(ClusterLabelingError, match="exactly 3 clusters, got 2"):
            cluster_label_map(_result([[0.1, 0.1], [0.9, 0.9]], [0, 1]))


class TestPairwiseScatter:
    """Tests for the per-feature-pair scatter data."""

    def test_frame_per_feature_pair(self):
        data = _blobs(6)
        table = FeatureTable(
            pairs=tuple(PairKey(row, row + 100) for row in range(len(data))),
            values=data,
        )
        labels = label_clusters(kmeans(data, 3, rng_seed=6, restarts=5))
        frames = pairwise_scatter(table, labels, rng_seed=6, restarts=5)
        assert list(frames) == list(FEATURE_PAIRS)
        for frame in frames.values():
            assert list(frame.columns) == ["x", "y", "label", "pair_label"]
            assert len(frame) == len(data)
            assert set(frame["pair_label"]) <= {0, 1, 2}
        np.testing.assert_allclose(frames[("fs", "coi")]["x"], data[:, 0])
        assert list(frames[("fs", "coi")]["label"]) == [int(label) for label in labels]

    def test_too_few_points_fall_back_to_labels(self):
        table = FeatureTable(
            pairs=(PairKey(0, 1), PairKey(1, 0)),
            values=np.array([[0.1, 0.2, 0.3, 0.4], [0.5, 0.6, 0.7, 0.8]]),
        )
        labels = [TrustLabel.NEUTRAL, TrustLabel.TRUSTWORTHY]
        frames = pairwise_scatter(table, labels, rng_seed=0, restarts=1)
        assert list(frames[("coi", "cop")]["pair_label"]) == [2, 1]


class TestLabelFiles:
    """Tests for the label and cost-curve CSVs."""

    def test_labels_written_and_read(self, tmp_path):
        path = tmp_path / "labels.csv"
        pairs = [PairKey(0, 1), PairKey(1, 0), PairKey(3, 2)]
        labels = [TrustLabel.NEUTRAL, TrustLabel.TRUSTWORTHY, TrustLabel.UNTRUSTWORTHY]
        write_labels(pairs, labels, path)
        assert path.read_text().splitlines()[0] == "trustor,trustee,label"
        assert read_labels(path) == dict(zip(pairs, labels, strict=True))

    def test_labels_written_in_source_ids(self, tmp_path):
        path = tmp_path / "labels.csv"
        write_labels([PairKey(0, 2)], [TrustLabel.TRUSTWORTHY], path, [10, 20, 30])
        assert path.read_text().splitlines()[1] == "10,30,1"

    def test_invalid_label_rejected(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("trustor,trustee,label\n0,1,5\n")
        with pytest.raises(ValueError):
            read_labels(path)

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("trustor,trustee\n0,1\n")
        with pytest.raises(ValueError, match="missing columns label"):
            read_labels(path)

    def test_cost_curve_csv(self, tmp_path):
        path = tmp_path / "elbow.csv"
        write_cost_curve({1: 4.0, 2: 1.5}, path)
        assert path.read_text().splitlines() == ["k,cost", "1,4.000000", "2,1.500000"]
