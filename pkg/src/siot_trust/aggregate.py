"""Trust score estimation: fuse direct trust with friends' recommendations.

For an ordered pair ``(i, j)`` every common friend ``r`` of ``i`` and ``j``
that holds a direct-trust label toward ``j`` is a recommender. The trustor's
own label and the tallied recommendations are combined into a binary verdict;
``theta`` is the share of recommendations needed to overturn the trustor.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import pandas as pd

from siot_trust.clustering import TrustLabel
from siot_trust.graph import (
    PairKey,
    SocialGraph,
    common_friends,
    interacting_pairs,
    source_pairs,
)

logger = logging.getLogger(__name__)

VERDICT_COLUMNS = (
    "trustor",
    "trustee",
    "direct_label",
    "t_count",
    "u_count",
    "n_count",
    "verdict",
)


class AggregationConfigError(ValueError):
    """Raised for an invalid aggregation threshold."""


class TrustVerdict(IntEnum):
    """Final binary trust decision."""

    UNTRUSTWORTHY = 0
    TRUSTWORTHY = 1


@dataclass(frozen=True)
class RecommendationSet:
    """Counts of trustworthy, untrustworthy and neutral recommendations."""

    t_count: int = 0
    u_count: int = 0
    n_count: int = 0

    def __post_init__(self) -> None:
        if min(self.t_count, self.u_count, self.n_count) < 0:
            raise ValueError("recommendation counts must be non-negative")

    @property
    def total(self) -> int:
        return self.t_count + self.u_count + self.n_count


@dataclass(frozen=True)
class AggregationConfig:
    """:ivar theta: Recommendation share in ``(0, 1]`` needed to overturn."""

    theta: float = 0.7

    def __post_init__(self) -> None:
        if not 0.0 < self.theta <= 1.0:
            raise AggregationConfigError(
                f"theta must lie in (0, 1], got {self.theta}"
            )


def collect_recommendations(
    graph: SocialGraph,
    labels_by_pair: Mapping[PairKey, TrustLabel | int],
    i: int,
    j: int,
) -> RecommendationSet:
    """Tally the labels that common friends of *i* and *j* hold toward *j*.

    Recommenders without a label toward *j* are skipped.
    """
    counts = {label: 0 for label in TrustLabel}
    for recommender in common_friends(graph, i, j):
        label = labels_by_pair.get(PairKey(recommender, j))
        if label is not None:
            counts[TrustLabel(int(label))] += 1
    return RecommendationSet(
        t_count=counts[TrustLabel.TRUSTWORTHY],
        u_count=counts[TrustLabel.UNTRUSTWORTHY],
        n_count=counts[TrustLabel.NEUTRAL],
    )


def estimate_trust(
    direct: TrustLabel | int, recs: RecommendationSet, cfg: AggregationConfig
) -> TrustVerdict:
    """Combine a direct label with recommendations into a verdict.

    - Without recommendations the direct label stands; a neutral direct label
      with no recommendations is untrustworthy.
    - An untrustworthy trustor is overturned only when trustworthy
      recommendations outnumber both other kinds and
      ``t / (total + 1) >= theta``.
    - A trustworthy trustor is overturned only when untrustworthy
      recommendations outnumber both other kinds and
      ``u / (total + 1) >= theta``.
    - A neutral trustor follows the majority of trustworthy over
      untrustworthy recommendations, with ties untrustworthy.
    """
    direct = TrustLabel(int(direct))
    t, u, n = recs.t_count, recs.u_count, recs.n_count
    if recs.total == 0:
        if direct is TrustLabel.TRUSTWORTHY:
            return TrustVerdict.TRUSTWORTHY
        return TrustVerdict.UNTRUSTWORTHY

    neutral_dominant = n >= t and n >= u
    if direct is TrustLabel.UNTRUSTWORTHY:
        if u >= t or neutral_dominant:
            return TrustVerdict.UNTRUSTWORTHY
        if t / (recs.total + 1) >= cfg.theta:
            return TrustVerdict.TRUSTWORTHY
        return TrustVerdict.UNTRUSTWORTHY

    if direct is TrustLabel.TRUSTWORTHY:
        if t >= u or neutral_dominant:
            return TrustVerdict.TRUSTWORTHY
        if u / (recs.total + 1) >= cfg.theta:
            return TrustVerdict.UNTRUSTWORTHY
        return TrustVerdict.TRUSTWORTHY

    return TrustVerdict.TRUSTWORTHY if t > u else TrustVerdict.UNTRUSTWORTHY


@dataclass(frozen=True)
class VerdictRow:
    """Verdict of one pair together with the evidence behind it."""

    pair: PairKey
    direct: TrustLabel
    recommendations: RecommendationSet
    verdict: TrustVerdict


def _labels_covering(
    graph: SocialGraph, labels_by_pair: Mapping[PairKey, TrustLabel | int]
) -> list[PairKey]:
    pairs = interacting_pairs(graph)
    missing = [pair for pair in pairs if pair not in labels_by_pair]
    if missing:
        raise ValueError(
            f"{len(missing)} interacting pairs have no direct label, "
            f"e.g. {tuple(missing[0])}"
        )
    return pairs


def verdict_rows(
    graph: SocialGraph,
    labels_by_pair: Mapping[PairKey, TrustLabel | int],
    cfg: AggregationConfig,
    reported: Mapping[PairKey, TrustLabel | int] | None = None,
) -> list[VerdictRow]:
    """Estimate every interacting pair, keeping counts for export.

    :param reported: Labels recommenders disclose, when they differ from what
        they hold; defaults to *labels_by_pair*.
    :raises ValueError: If an interacting pair has no direct label.
    """
    said = labels_by_pair if reported is None else reported
    rows = []
    for pair in _labels_covering(graph, labels_by_pair):
        direct = TrustLabel(int(labels_by_pair[pair]))
        recs = collect_recommendations(graph, said, *pair)
        rows.append(VerdictRow(pair, direct, recs, estimate_trust(direct, recs, cfg)))
    return rows


def estimate_all(
    graph: SocialGraph,
    labels_by_pair: Mapping[PairKey, TrustLabel | int],
    cfg: AggregationConfig,
    reported: Mapping[PairKey, TrustLabel | int] | None = None,
) -> dict[PairKey, TrustVerdict]:
    """Return the verdict of every interacting pair, in pair order."""
    return {
        row.pair: row.verdict
        for row in verdict_rows(graph, labels_by_pair, cfg, reported)
    }


def verdict_accuracy(
    verdicts: Mapping[PairKey, TrustVerdict | int],
    ground_truth: Mapping[PairKey, int],
) -> float:
    """Fraction of ground-truth pairs whose verdict matches.

    :raises ValueError: If no ground-truth pair has a verdict.
    """
    scored = [pair for pair in ground_truth if pair in verdicts]
    if not scored:
        raise ValueError(
            f"ground truth shares no pair with the {len(verdicts)} verdicts"
        )
    hits = sum(int(verdicts[pair]) == int(ground_truth[pair]) for pair in scored)
    return hits / len(scored)


def verdicts_by_theta(
    graph: SocialGraph,
    labels_by_pair: Mapping[PairKey, TrustLabel | int],
    thetas: Iterable[float],
    reported: Mapping[PairKey, TrustLabel | int] | None = None,
) -> dict[float, dict[PairKey, TrustVerdict]]:
    """Estimate every interacting pair once per theta.

    Recommendations are collected once and re-evaluated per theta.
    """
    said = labels_by_pair if reported is None else reported
    evidence = [
        (
            pair,
            TrustLabel(int(labels_by_pair[pair])),
            collect_recommendations(graph, said, *pair),
        )
        for pair in _labels_covering(graph, labels_by_pair)
    ]
    by_theta = {}
    for theta in thetas:
        cfg = AggregationConfig(theta=theta)
        by_theta[theta] = {
            pair: estimate_trust(direct, recs, cfg) for pair, direct, recs in evidence
        }
    return by_theta


def theta_sweep(
    graph: SocialGraph,
    labels_by_pair: Mapping[PairKey, TrustLabel | int],
    ground_truth: Mapping[PairKey, int],
    thetas: Iterable[float],
    reported: Mapping[PairKey, TrustLabel | int] | None = None,
) -> dict[float, float]:
    """Accuracy of the verdicts against *ground_truth* for each theta."""
    by_theta = verdicts_by_theta(graph, labels_by_pair, thetas, reported)
    curve = {
        theta: verdict_accuracy(verdicts, ground_truth)
        for theta, verdicts in by_theta.items()
    }
    logger.info(
        "Theta sweep: %s",
        ", ".join(f"{theta:g}:{score:.4f}" for theta, score in curve.items()),
    )
    return curve


def write_verdicts(
    rows: Iterable[VerdictRow],
    path: str | Path,
    source_ids: Sequence[int] | None = None,
) -> None:
    """Write ``trustor,trustee,direct_label,t_count,u_count,n_count,verdict``.

    :param source_ids: Original node ids to write instead of the dense ones.
    """
    rows = list(rows)
    pairs = source_pairs((row.pair for row in rows), source_ids)
    pd.DataFrame(
        [
            (
                pair.trustor,
                pair.trustee,
                int(row.direct),
                row.recommendations.t_count,
                row.recommendations.u_count,
                row.recommendations.n_count,
                int(row.verdict),
            )
            for pair, row in zip(pairs, rows, strict=True)
        ],
        columns=list(VERDICT_COLUMNS),
    ).to_csv(Path(path), index=False, lineterminator="\n")


def write_theta_sweep(curve: Mapping[float, float], path: str | Path) -> None:
    """Write the sweep as ``theta,accuracy``."""
    pd.DataFrame({"theta": list(curve), "accuracy": list(curve.values())}).to_csv(
        Path(path), index=False, float_format="%.6f", lineterminator="\n"
    )


def read_ground_truth(path: str | Path) -> dict[PairKey, int]:
    """Read a ``trustor,trustee,expected`` file.

    :raises ValueError: On missing columns or expectations other than 0/1.
    """
    frame = pd.read_csv(Path(path), comment="#")
    missing = {"trustor", "trustee", "expected"} - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {', '.join(sorted(missing))}")
    truth = {}
    for trustor, trustee, expected in zip(
        frame["trustor"], frame["trustee"], frame["expected"], strict=True
    ):
        if int(expected) not in (0, 1):
            raise ValueError(f"{path}: expected must be 0 or 1, got {expected}")
        truth[PairKey(int(trustor), int(trustee))] = int(expected)
    return truth
