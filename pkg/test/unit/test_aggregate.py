"""Unit tests for siot_trust.aggregate."""

import itertools

import pytest

from siot_trust.aggregate import (
    VERDICT_COLUMNS,
    AggregationConfig,
    AggregationConfigError,
    RecommendationSet,
    TrustVerdict,
    collect_recommendations,
    estimate_all,
    estimate_trust,
    read_ground_truth,
    theta_sweep,
    verdict_accuracy,
    verdict_rows,
    verdicts_by_theta,
    write_theta_sweep,
    write_verdicts,
)
from siot_trust.clustering import TrustLabel
from siot_trust.graph import InteractionRecord, PairKey, SocialGraph

U, T, N = TrustLabel.UNTRUSTWORTHY, TrustLabel.TRUSTWORTHY, TrustLabel.NEUTRAL
THETAS = [round(0.1 * step, 1) for step in range(1, 11)]


def _reference(direct, t, u, n, theta):
    """Straight transcription of the decision procedure, kept independent."""
    total = t + u + n
    if total == 0:
        return 1 if direct == 1 else 0
    if direct == 0:
        if u >= t or (n >= t and n >= u):
            return 0
        p_t = t / (total + 1)
        return 1 if p_t >= theta else 0
    if direct == 1:
        if t >= u or (n >= t and n >= u):
            return 1
        p_u = u / (total + 1)
        return 0 if p_u >= theta else 1
    return 1 if t > u else 0


def _triples(limit=12):
    for t, u, n in itertools.product(range(limit + 1), repeat=3):
        if t + u + n <= limit:
            yield t, u, n


def _estimate(direct, t, u, n, theta=0.7):
    return estimate_trust(direct, RecommendationSet(t, u, n), AggregationConfig(theta))


@pytest.fixture
def star():
    """Trustor 0 and trustee 1 share friends 2, 3 and 4, who all dealt with 1."""
    graph = SocialGraph.build(
        5,
        friendships=[(0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 4)],
        interactions=[
            InteractionRecord(0, 0, 1, 1, True),
            InteractionRecord(1, 2, 1, 1, True),
            InteractionRecord(2, 3, 1, 1, True),
            InteractionRecord(3, 4, 1, 1, True),
        ],
    )
    labels = {
        PairKey(0, 1): U,
        PairKey(1, 0): N,
        PairKey(2, 1): T,
        PairKey(1, 2): T,
        PairKey(3, 1): T,
        PairKey(1, 3): T,
        PairKey(4, 1): T,
        PairKey(1, 4): T,
    }
    return graph, labels


class TestEstimateTrust:
    """Tests for combining a direct label with recommendations."""

    @pytest.mark.parametrize(
        ("direct", "counts", "expected"),
        [
            (U, (3, 0, 0), 1),
            (U, (3, 0, 3), 0),
            (U, (3, 1, 0), 0),
            (U, (5, 0, 0), 1),
            (U, (2, 2, 0), 0),
            (T, (0, 3, 0), 0),
            (T, (1, 3, 0), 1),
            (T, (0, 0, 0), 1),
            (N, (0, 0, 0), 0),
            (N, (2, 1, 5), 1),
            (N, (1, 1, 0), 0),
            (U, (0, 0, 0), 0),
        ],
    )
    def test_examples(self, direct, counts, expected):
        assert _estimate(direct, *counts) == expected

    def test_threshold_is_inclusive(self):
        """3 of 3 plus one gives 0.75, enough for 0.75 but not for 0.76."""
        assert _estimate(U, 3, 0, 0, theta=0.75) == TrustVerdict.TRUSTWORTHY
        assert _estimate(U, 3, 0, 0, theta=0.76) == TrustVerdict.UNTRUSTWORTHY

    def test_theta_one_never_overturns(self):
        for t, u, n in _triples():
            assert _estimate(U, t, u, n, theta=1.0) == TrustVerdict.UNTRUSTWORTHY
            assert _estimate(T, t, u, n, theta=1.0) == TrustVerdict.TRUSTWORTHY

    def test_matches_reference_everywhere(self):
        checked = 0
        for (t, u, n), direct, theta in itertools.product(
            _triples(), (U, T, N), THETAS
        ):
            expected = _reference(int(direct), t, u, n, theta)
            assert _estimate(direct, t, u, n, theta) == expected, (direct, t, u, n)
            checked += 1
        assert checked == 13_650

    def test_more_trust_never_lowers_verdict(self):
        for (t, u, n), direct in itertools.product(_triples(11), (U, T, N)):
            assert _estimate(direct, t + 1, u, n) >= _estimate(direct, t, u, n)

    def test_more_distrust_never_raises_verdict(self):
        for (t, u, n), direct in itertools.product(_triples(11), (U, T, N)):
            assert _estimate(direct, t, u + 1, n) <= _estimate(direct, t, u, n)

    def test_theta_monotone(self):
        for t, u, n in _triples():
            low = [_estimate(U, t, u, n, theta) for theta in THETAS]
            high = [_estimate(T, t, u, n, theta) for theta in THETAS]
            assert low == sorted(low, reverse=True)
            assert high == sorted(high)

    def test_roles_mirror_when_neutral_is_small(self):
        for t, u, n in _triples():
            if n >= min(t, u):
                continue
            for theta in THETAS:
                assert _estimate(U, t, u, n, theta) == 1 - _estimate(T, u, t, n, theta)

    def test_returns_verdict_enum(self):
        assert _estimate(2, 1, 0, 0) is TrustVerdict.TRUSTWORTHY


class TestConfig:
    """Tests for the aggregation parameters."""

    @pytest.mark.parametrize("theta", [0.0, -0.1, 1.01])
    def test_theta_bounds(self, theta):
        with pytest.raises(AggregationConfigError, match="theta must lie in"):
            AggregationConfig(theta=theta)

    def test_theta_one_allowed(self):
        assert AggregationConfig(theta=1.0).theta == 1.0

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            RecommendationSet(-1, 0, 0)


class TestCollectRecommendations:
    """Tests for tallying common friends' labels."""

    def test_counts_common_friends(self, star):
        graph, labels = star
        counts = collect_recommendations(graph, labels, 0, 1)
        assert counts == RecommendationSet(3, 0, 0)

    def test_mixed_labels(self, star):
        graph, labels = star
        labels = {**labels, PairKey(3, 1): U, PairKey(4, 1): N}
        counts = collect_recommendations(graph, labels, 0, 1)
        assert counts == RecommendationSet(1, 1, 1)

    def test_recommenders_without_label_skipped(self, star):
        graph, labels = star
        del labels[PairKey(4, 1)]
        counts = collect_recommendations(graph, labels, 0, 1)
        assert counts == RecommendationSet(2, 0, 0)

    def test_no_common_friends(self, star):
        graph, labels = star
        assert collect_recommendations(graph, labels, 2, 1).total == 0


class TestEstimateAll:
    """Tests for whole-graph estimation."""

    def test_star(self, star):
        graph, labels = star
        verdicts = estimate_all(graph, labels, AggregationConfig(0.7))
        assert list(verdicts) == sorted(labels)
        assert verdicts[PairKey(0, 1)] is TrustVerdict.TRUSTWORTHY
        assert verdicts[PairKey(1, 0)] is TrustVerdict.UNTRUSTWORTHY
        assert all(
            verdict is TrustVerdict.TRUSTWORTHY
            for pair, verdict in verdicts.items()
            if pair not in (PairKey(0, 1), PairKey(1, 0))
        )

    def test_star_with_higher_theta(self, star):
        graph, labels = star
        verdicts = estimate_all(graph, labels, AggregationConfig(0.8))
        assert verdicts[PairKey(0, 1)] is TrustVerdict.UNTRUSTWORTHY

    def test_reported_labels_feed_recommendations_only(self, star):
        graph, labels = star
        reported = {**labels, PairKey(2, 1): U, PairKey(3, 1): U}
        verdicts = estimate_all(graph, labels, AggregationConfig(0.7), reported)
        assert verdicts[PairKey(0, 1)] is TrustVerdict.UNTRUSTWORTHY
        assert verdicts[PairKey(2, 1)] is TrustVerdict.TRUSTWORTHY

    def test_no_friendships_binarize_direct_labels(self, star):
        graph, labels = star
        lonely = SocialGraph.build(5, interactions=graph.interactions)
        verdicts = estimate_all(lonely, labels, AggregationConfig())
        assert verdicts == {pair: int(label is T) for pair, label in labels.items()}

    def test_missing_label_rejected(self, star):
        graph, labels = star
        del labels[PairKey(1, 4)]
        with pytest.raises(ValueError, match="1 interacting pairs have no direct"):
            estimate_all(graph, labels, AggregationConfig())

    def test_rows_keep_evidence(self, star):
        graph, labels = star
        rows = verdict_rows(graph, labels, AggregationConfig())
        first = rows[0]
        assert first.pair == PairKey(0, 1)
        assert first.direct is U
        assert first.recommendations == RecommendationSet(3, 0, 0)
        assert first.verdict is TrustVerdict.TRUSTWORTHY


class TestThetaSweep:
    """Tests for evaluating verdicts against ground truth."""

    def test_accuracy(self):
        verdicts = {PairKey(0, 1): 1, PairKey(1, 0): 0, PairKey(1, 2): 1}
        truth = {PairKey(0, 1): 1, PairKey(1, 0): 1, PairKey(5, 6): 0}
        assert verdict_accuracy(verdicts, truth) == 0.5

    def test_accuracy_without_overlap(self):
        with pytest.raises(ValueError, match="shares no pair with the 1 verdicts"):
            verdict_accuracy({PairKey(0, 1): 1}, {PairKey(2, 3): 1})

    def test_self_consistent_truth(self, star):
        graph, labels = star
        truth = {
            pair: int(verdict)
            for pair, verdict in estimate_all(
                graph, labels, AggregationConfig()
            ).items()
        }
        curve = theta_sweep(graph, labels, truth, THETAS)
        assert curve[0.7] == 1.0
        assert list(curve) == THETAS

    def test_all_neutral_labels(self, star):
        """Neutral labels everywhere make verdicts independent of theta."""
        graph, labels = star
        neutral = dict.fromkeys(labels, N)
        truth = {pair: 0 for pair in labels}
        assert set(theta_sweep(graph, neutral, truth, THETAS).values()) == {1.0}

    def test_verdicts_by_theta_match_estimate_all(self, star):
        graph, labels = star
        by_theta = verdicts_by_theta(graph, labels, [0.7, 0.8])
        for theta, verdicts in by_theta.items():
            assert verdicts == estimate_all(graph, labels, AggregationConfig(theta))


class TestFiles:
    """Tests for verdict, sweep and ground-truth CSVs."""

    def test_verdicts_csv(self, star, tmp_path):
        graph, labels = star
        path = tmp_path / "verdicts.csv"
        write_verdicts(verdict_rows(graph, labels, AggregationConfig()), path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(VERDICT_COLUMNS)
        assert lines[1] == "0,1,0,3,0,0,1"
        assert len(lines) == len(labels) + 1

    def test_verdicts_csv_in_source_ids(self, star, tmp_path):
        graph, labels = star
        path = tmp_path / "verdicts.csv"
        rows = verdict_rows(graph, labels, AggregationConfig())
        write_verdicts(rows, path, [50, 51, 52, 53, 54])
        assert path.read_text().splitlines()[1] == "50,51,0,3,0,0,1"

    def test_sweep_csv(self, tmp_path):
        path = tmp_path / "sweep.csv"
        write_theta_sweep({0.5: 0.9, 0.7: 0.875}, path)
        assert path.read_text().splitlines() == [
            "theta,accuracy",
            "0.500000,0.900000",
            "0.700000,0.875000",
        ]

    def test_read_ground_truth(self, tmp_path):
        path = tmp_path / "truth.csv"
        path.write_text("trustor,trustee,expected\n0,1,1\n1,0,0\n")
        assert read_ground_truth(path) == {PairKey(0, 1): 1, PairKey(1, 0): 0}

    def test_ground_truth_values_checked(self, tmp_path):
        path = tmp_path / "truth.csv"
        path.write_text("trustor,trustee,expected\n0,1,2\n")
        with pytest.raises(ValueError, match="expected must be 0 or 1"):
            read_ground_truth(path)
