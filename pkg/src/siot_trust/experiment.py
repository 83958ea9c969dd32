"""End-to-end experiment runner.

One experiment generates (or takes) a trace, extracts features, picks k on
the elbow curve, labels pairs with 3-means, trains a forest on those labels,
applies the configured attack, estimates verdicts and scores everything
against the planted ground truth. All randomness is derived from the
simulation seed.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from siot_trust.aggregate import (
    AggregationConfig,
    TrustVerdict,
    verdict_accuracy,
    verdicts_by_theta,
)
from siot_trust.clustering import (
    InfeasibleClusteringError,
    TrustLabel,
    cost_curve,
    elbow_from_costs,
    kmeans,
    label_clusters,
)
from siot_trust.features import (
    FEATURE_NAMES,
    BaselineWeights,
    FeatureTable,
    baseline_weighted_trust,
    feature_matrix,
)
from siot_trust.forest import ForestModel, SplitSpec, train_forest
from siot_trust.graph import PairKey, SocialGraph
from siot_trust.seeding import derive_seed
from siot_trust.simulation import (
    AttackSpec,
    GroundTruth,
    SimConfig,
    apply_attack,
    apply_trace_attack,
    generate_trace,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_SWEEP = tuple(round(0.1 * k, 1) for k in range(1, 11))


@dataclass(frozen=True)
class PipelineParams:
    """Knobs of every pipeline stage after trace generation."""

    theta: float = 0.7
    k_min: int = 1
    k_max: int = 8
    clusters: int = 3
    restarts: int = 20
    max_iters: int = 300
    tree_count: int = 100
    max_depth: int = 8
    train_fraction: float = 0.8
    sweep_thetas: tuple[float, ...] = DEFAULT_SWEEP
    baseline_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    workers: int = 1

    def __post_init__(self) -> None:
        AggregationConfig(theta=self.theta)
        for theta in self.sweep_thetas:
            AggregationConfig(theta=theta)
        if self.k_min < 1 or self.k_max < self.k_min:
            raise InfeasibleClusteringError(
                f"invalid k range [{self.k_min}, {self.k_max}]"
            )
        if self.restarts < 1 or self.max_iters < 1:
            raise InfeasibleClusteringError("restarts and max_iters must be >= 1")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        BaselineWeights(*self.baseline_weights)
        SplitSpec(train_fraction=self.train_fraction)

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["sweep_thetas"] = list(self.sweep_thetas)
        data["baseline_weights"] = list(self.baseline_weights)
        # results do not depend on the worker count
        del data["workers"]
        return data


@dataclass(frozen=True)
class ThetaScore:
    """Verdict quality at one threshold."""

    theta: float
    accuracy: float
    false_trust_rate: float
    false_distrust_rate: float

    def to_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


def score_verdicts(
    theta: float,
    verdicts: Mapping[PairKey, TrustVerdict | int],
    expected: Mapping[PairKey, int],
) -> ThetaScore:
    """Score *verdicts* against *expected*.

    The false-trust rate is the share of pairs expected 0 that were trusted;
    the false-distrust rate the share of pairs expected 1 that were not.
    Either rate is 0 when its class is empty.
    """
    negatives = [pair for pair, value in expected.items() if value == 0]
    positives = [pair for pair, value in expected.items() if value == 1]
    trusted = sum(int(verdicts.get(pair, 0)) == 1 for pair in negatives)
    distrusted = sum(int(verdicts.get(pair, 0)) == 0 for pair in positives)
    return ThetaScore(
        theta=theta,
        accuracy=verdict_accuracy(verdicts, expected),
        false_trust_rate=trusted / len(negatives) if negatives else 0.0,
        false_distrust_rate=distrusted / len(positives) if positives else 0.0,
    )


@dataclass(frozen=True)
class ExperimentReport:
    """Metrics of one experiment.

    Serialized by :meth:`to_json` with sorted keys, so equal experiments
    give equal bytes.
    """

    seed: int
    config: dict[str, Any]
    pipeline: dict[str, Any]
    attack: dict[str, Any] | None
    node_count: int
    interaction_count: int
    pair_count: int
    elbow_k: int
    cost_curve: dict[int, float]
    label_counts: dict[str, int]
    held_out_accuracy: float
    training_accuracy: float
    feature_importances: dict[str, float]
    theta: float
    accuracy: float
    false_trust_rate: float
    false_distrust_rate: float
    direct_only_accuracy: float
    baseline_accuracy: float
    theta_sweep: tuple[ThetaScore, ...] = field(default_factory=tuple)

    def sweep_entry(self, theta: float) -> ThetaScore:
        """Return the sweep score at *theta*.

        :raises KeyError: If *theta* was not swept.
        """
        for entry in self.theta_sweep:
            if abs(entry.theta - theta) < 1e-9:
                return entry
        raise KeyError(theta)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "config": self.config,
            "pipeline": self.pipeline,
            "trace": {
                "node_count": self.node_count,
                "interaction_count": self.interaction_count,
                "pair_count": self.pair_count,
            },
            "clustering": {
                "elbow_k": self.elbow_k,
                "cost_curve": [
                    {"k": k, "cost": cost} for k, cost in self.cost_curve.items()
                ],
                "label_counts": self.label_counts,
            },
            "forest": {
                "held_out_accuracy": self.held_out_accuracy,
                "training_accuracy": self.training_accuracy,
                "feature_importances": self.feature_importances,
            },
            "aggregate": {
                "theta": self.theta,
                "accuracy": self.accuracy,
                "false_trust_rate": self.false_trust_rate,
                "false_distrust_rate": self.false_distrust_rate,
                "direct_only_accuracy": self.direct_only_accuracy,
                "baseline_accuracy": self.baseline_accuracy,
                "theta_sweep": [entry.to_dict() for entry in self.theta_sweep],
            },
        }
        if self.attack is not None:
            data["attack"] = self.attack
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def write_report(report: ExperimentReport, path: str | Path) -> None:
    """Write :meth:`ExperimentReport.to_json` to *path*."""
    Path(path).write_text(report.to_json() + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class PipelineRun:
    """Intermediate artifacts of one run, kept for plot-data export."""

    graph: SocialGraph
    truth: GroundTruth
    table: FeatureTable
    costs: dict[int, float]
    labels: list[TrustLabel]
    model: ForestModel
    labels_by_pair: dict[PairKey, TrustLabel]
    reported: dict[PairKey, TrustLabel]
    report: ExperimentReport


def _direct_verdicts(
    labels_by_pair: Mapping[PairKey, TrustLabel],
) -> dict[PairKey, int]:
    return {
        pair: int(label is TrustLabel.TRUSTWORTHY)
        for pair, label in labels_by_pair.items()
    }


def _baseline_verdicts(
    table: FeatureTable, weights: BaselineWeights
) -> dict[PairKey, int]:
    return {
        pair: int(baseline_weighted_trust(table.vector(row), weights) >= 0.5)
        for row, pair in enumerate(table.pairs)
    }


def run_pipeline(
    cfg: SimConfig,
    attack: AttackSpec | None = None,
    params: PipelineParams | None = None,
    trace: tuple[SocialGraph, GroundTruth] | None = None,
) -> PipelineRun:
    """Run every stage and keep the intermediate artifacts.

    :param cfg: Simulation configuration; its seed drives every stage.
    :param attack: Attack to mount, none by default.
    :param params: Pipeline parameters.
    :param trace: A pre-generated trace and ground truth to use instead of
        generating one from *cfg*.
    """
    attack = attack or AttackSpec()
    params = params or PipelineParams()
    seed = cfg.rng_seed
    graph, truth = trace if trace is not None else generate_trace(cfg)
    attack_seed = derive_seed(seed, "attack")
    graph = apply_trace_attack(graph, truth, attack, attack_seed)

    table = feature_matrix(graph)
    costs = cost_curve(
        table.values,
        params.k_min,
        params.k_max,
        rng_seed=seed,
        restarts=params.restarts,
        max_iters=params.max_iters,
        workers=params.workers,
    )
    elbow_k = elbow_from_costs(costs)
    if elbow_k != params.clusters:
        logger.warning(
            "Elbow picked k=%d; labeling with %d clusters", elbow_k, params.clusters
        )
    clustering = kmeans(
        table.values,
        params.clusters,
        derive_seed(seed, "kmeans"),
        max_iters=params.max_iters,
        restarts=params.restarts,
        workers=params.workers,
    )
    labels = label_clusters(clustering)

    model, held_out = train_forest(
        table.values,
        [int(label) for label in labels],
        SplitSpec(params.train_fraction, derive_seed(seed, "split")),
        tree_count=params.tree_count,
        max_depth=params.max_depth,
        workers=params.workers,
    )

    labels_by_pair = dict(zip(table.pairs, labels, strict=True))
    # attackers lie to others but keep their own direct labels
    reported = apply_attack(labels_by_pair, graph, truth, attack, attack_seed)
    expected = truth.for_pairs(table.pairs)
    thetas = sorted({*params.sweep_thetas, params.theta})
    by_theta = verdicts_by_theta(graph, labels_by_pair, thetas, reported)
    scores = {
        theta: score_verdicts(theta, by_theta[theta], expected) for theta in thetas
    }
    chosen = scores[params.theta]

    report = ExperimentReport(
        seed=seed,
        config=dataclasses.asdict(cfg),
        pipeline=params.to_dict(),
        attack=attack.to_dict() if attack.is_active else None,
        node_count=graph.node_count,
        interaction_count=len(graph.interactions),
        pair_count=len(table),
        elbow_k=elbow_k,
        cost_curve=costs,
        label_counts={
            label.name.lower(): sum(1 for value in labels if value is label)
            for label in TrustLabel
        },
        held_out_accuracy=held_out,
        training_accuracy=model.training_accuracy,
        feature_importances=dict(
            zip(FEATURE_NAMES, model.feature_importances, strict=True)
        ),
        theta=params.theta,
        accuracy=chosen.accuracy,
        false_trust_rate=chosen.false_trust_rate,
        false_distrust_rate=chosen.false_distrust_rate,
        direct_only_accuracy=verdict_accuracy(
            _direct_verdicts(labels_by_pair), expected
        ),
        baseline_accuracy=verdict_accuracy(
            _baseline_verdicts(table, BaselineWeights(*params.baseline_weights)),
            expected,
        ),
        theta_sweep=tuple(scores[theta] for theta in params.sweep_thetas),
    )
    logger.info(
        "Experiment seed=%d: accuracy %.4f at theta=%g (direct only %.4f, "
        "baseline %.4f), forest held-out %.4f",
        seed,
        report.accuracy,
        report.theta,
        report.direct_only_accuracy,
        report.baseline_accuracy,
        report.held_out_accuracy,
    )
    return PipelineRun(
        graph=graph,
        truth=truth,
        table=table,
        costs=costs,
        labels=labels,
        model=model,
        labels_by_pair=labels_by_pair,
        reported=reported,
        report=report,
    )


def run_experiment(
    cfg: SimConfig,
    attack: AttackSpec | None = None,
    params: PipelineParams | None = None,
    trace: tuple[SocialGraph, GroundTruth] | None = None,
) -> ExperimentReport:
    """Run the full pipeline and return its metrics.

    :raises ValueError: Any module error, for instance an infeasible
        clustering or too few pairs to train on.
    """
    return run_pipeline(cfg, attack, params, trace).report


def run_seeds(
    cfg: SimConfig,
    seeds: Iterable[int],
    attack: AttackSpec | None = None,
    params: PipelineParams | None = None,
    workers: int = 1,
) -> list[ExperimentReport]:
    """Run one experiment per seed, results in seed order."""
    configs = [dataclasses.replace(cfg, rng_seed=seed) for seed in seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(
                pool.map(lambda config: run_experiment(config, attack, params), configs)
            )
    return [run_experiment(config, attack, params) for config in configs]


def mean_sweep(
    reports: Sequence[ExperimentReport], theta: float
) -> ThetaScore:
    """Average the sweep scores at *theta* over *reports*."""
    entries = [report.sweep_entry(theta) for report in reports]
    count = len(entries)
    return ThetaScore(
        theta=theta,
        accuracy=sum(entry.accuracy for entry in entries) / count,
        false_trust_rate=sum(entry.false_trust_rate for entry in entries) / count,
        false_distrust_rate=sum(entry.false_distrust_rate for entry in entries)
        / count,
    )
