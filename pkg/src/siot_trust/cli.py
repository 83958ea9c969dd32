"""Command-line interface: ``siot-trust <subcommand> [flags]``.

Every subcommand returns an exit code: 0 on success, 1 for bad input or a
missing file, 2 for an internal error. Defaults come from the environment
(optionally a ``.env`` file next to this module) and are overridden by flags.
"""

from __future__ import annotations

import argparse
import functools
import logging
import os
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, NoReturn

from dotenv import load_dotenv

from siot_trust import __version__
from siot_trust.aggregate import (
    AggregationConfig,
    read_ground_truth,
    theta_sweep,
    verdict_rows,
    write_theta_sweep,
    write_verdicts,
)
from siot_trust.clustering import (
    FEATURE_PAIRS,
    cost_curve,
    elbow_from_costs,
    kmeans,
    label_clusters,
    pairwise_scatter,
    read_labels,
    write_cost_curve,
    write_labels,
)
from siot_trust.experiment import PipelineParams, run_pipeline, write_report
from siot_trust.features import (
    FEATURE_NAMES,
    FeatureTable,
    feature_matrix,
    read_feature_table,
    write_feature_table,
)
from siot_trust.forest import (
    ForestModel,
    SplitSpec,
    decision_boundary_grid,
    grid_frame,
    save_model,
    train_forest,
    write_importances,
)
from siot_trust.graph import (
    NODE_MAP_FILE,
    ingest_trace_dir,
    write_node_map,
    write_trace,
)
from siot_trust.seeding import derive_seed
from siot_trust.simulation import (
    AttackSpec,
    SimConfig,
    generate_trace,
    write_ground_truth,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2


def _exit_codes(command: Callable[..., int]) -> Callable[..., int]:
    """Turn exceptions raised by *command* into exit codes."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> int:
        try:
            return command(*args, **kwargs)
        except (ValueError, OSError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_USER_ERROR
        except Exception:
            logger.exception("Internal error in %s", command.__name__)
            return EXIT_INTERNAL_ERROR

    return wrapper


def _plot_dir(out_file: str | Path, plot_dir: str | Path | None) -> Path:
    directory = Path(plot_dir) if plot_dir is not None else Path(out_file).parent
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _write_scatter(
    table: FeatureTable,
    labels: Sequence[Any],
    seed: int,
    restarts: int,
    directory: Path,
) -> None:
    for (first, second), frame in pairwise_scatter(
        table, labels, seed, restarts=restarts
    ).items():
        frame.to_csv(
            directory / f"scatter_{first}_{second}.csv",
            index=False,
            float_format="%.6f",
            lineterminator="\n",
        )


def _write_boundaries(model: ForestModel, resolution: int, directory: Path) -> None:
    for first, second in FEATURE_PAIRS:
        grid = decision_boundary_grid(model, (first, second), resolution)
        grid_frame(grid).to_csv(
            directory / f"boundary_{first}_{second}.csv",
            index=False,
            float_format="%.6f",
            lineterminator="\n",
        )


def _print_training(held_out: float, model: ForestModel) -> None:
    print(f"Held-out accuracy: {held_out:.4f}")
    print(f"Training accuracy: {model.training_accuracy:.4f}")
    for name, importance in zip(FEATURE_NAMES, model.feature_importances, strict=True):
        print(f"Importance {name}: {importance:.4f}")


@_exit_codes
def cmd_features(trace_dir: str | Path, out_file: str | Path) -> int:
    """Write the feature matrix of every interacting pair in *trace_dir*."""
    graph = ingest_trace_dir(trace_dir)
    table = feature_matrix(graph)
    out = Path(out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_table(table, out, graph.source_ids)
    if graph.is_remapped:
        write_node_map(graph, out.parent / NODE_MAP_FILE)
        print(f"Node ids were remapped; see {out.parent / NODE_MAP_FILE}")
    print(f"Wrote {len(table)} feature rows to {out}")
    return EXIT_OK


@_exit_codes
def cmd_label(
    features_file: str | Path,
    out_file: str | Path,
    k_range: tuple[int, int] = (1, 8),
    seed: int = 0,
    restarts: int = 20,
    workers: int = 1,
    plot_dir: str | Path | None = None,
) -> int:
    """Pick k on the elbow curve, label pairs with 3-means and export plot data."""
    table = read_feature_table(features_file)
    costs = cost_curve(
        table.values, k_range[0], k_range[1], seed, restarts=restarts, workers=workers
    )
    chosen = elbow_from_costs(costs)
    if chosen != 3:
        logger.warning("Elbow picked k=%d; labeling with 3 clusters", chosen)
    result = kmeans(
        table.values,
        3,
        derive_seed(seed, "kmeans"),
        restarts=restarts,
        workers=workers,
    )
    labels = label_clusters(result)
    out = Path(out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_labels(table.pairs, labels, out)

    directory = _plot_dir(out, plot_dir)
    write_cost_curve(costs, directory / "elbow.csv")
    _write_scatter(table, labels, seed, restarts, directory)
    print(f"Chosen k: {chosen}")
    print(f"Wrote {len(labels)} labels to {out}")
    return EXIT_OK


@_exit_codes
def cmd_train(
    features_file: str | Path,
    labels_file: str | Path,
    model_out: str | Path,
    train_fraction: float = 0.8,
    seed: int = 0,
    tree_count: int = 100,
    max_depth: int = 8,
    workers: int = 1,
    resolution: int = 50,
    plot_dir: str | Path | None = None,
) -> int:
    """Train a forest on labeled features, print accuracy and importances."""
    table = read_feature_table(features_file)
    labels_by_pair = read_labels(labels_file)
    if len(labels_by_pair) != len(table):
        raise ValueError(
            f"{features_file} has {len(table)} rows but {labels_file} has "
            f"{len(labels_by_pair)}"
        )
    missing = [pair for pair in table.pairs if pair not in labels_by_pair]
    if missing:
        raise ValueError(f"{labels_file} has no label for pair {tuple(missing[0])}")
    model, held_out = train_forest(
        table.values,
        [int(labels_by_pair[pair]) for pair in table.pairs],
        SplitSpec(train_fraction, seed),
        tree_count=tree_count,
        max_depth=max_depth,
        workers=workers,
    )
    out = Path(model_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)

    directory = _plot_dir(out, plot_dir)
    write_importances(model, directory / "importances.csv")
    _write_boundaries(model, resolution, directory)
    _print_training(held_out, model)
    return EXIT_OK


@_exit_codes
def cmd_aggregate(
    trace_dir: str | Path,
    labels_file: str | Path,
    theta: float,
    out_file: str | Path,
    sweep: Sequence[float] | None = None,
    ground_truth_file: str | Path | None = None,
    sweep_out: str | Path | None = None,
) -> int:
    """Write verdicts for every interacting pair, optionally a theta sweep.

    Labels and ground truth are keyed by the trace's own node ids.
    """
    if sweep and ground_truth_file is None:
        raise ValueError("--sweep needs --ground-truth")
    cfg = AggregationConfig(theta=theta)
    graph = ingest_trace_dir(trace_dir)
    labels_by_pair = graph.to_dense(read_labels(labels_file))
    rows = verdict_rows(graph, labels_by_pair, cfg)
    out = Path(out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_verdicts(rows, out, graph.source_ids)
    trusted = sum(int(row.verdict) for row in rows)
    print(f"Wrote {len(rows)} verdicts ({trusted} trustworthy) to {out}")

    if sweep:
        assert ground_truth_file is not None
        truth = graph.to_dense(read_ground_truth(ground_truth_file))
        curve = theta_sweep(graph, labels_by_pair, truth, sweep)
        target = Path(sweep_out) if sweep_out else out.parent / "theta_sweep.csv"
        write_theta_sweep(curve, target)
        for value, accuracy in curve.items():
            print(f"theta={value:g} accuracy={accuracy:.4f}")
    return EXIT_OK


@_exit_codes
def cmd_simulate(
    cfg: SimConfig,
    out_dir: str | Path,
    attack: AttackSpec | None = None,
    params: PipelineParams | None = None,
    full_pipeline: bool = False,
    resolution: int = 50,
) -> int:
    """Write a synthetic trace and its ground truth; optionally run everything."""
    out = Path(out_dir)
    graph, truth = generate_trace(cfg)
    write_trace(graph, out)
    write_ground_truth(graph, truth, out)
    print(
        f"Wrote {graph.node_count}-node trace with {len(graph.interactions)} "
        f"interactions to {out}"
    )
    if not full_pipeline:
        return EXIT_OK

    params = params or PipelineParams()
    run = run_pipeline(cfg, attack, params, trace=(graph, truth))
    write_report(run.report, out / "report.json")
    ids = run.graph.source_ids
    write_feature_table(run.table, out / "features.csv", ids)
    write_labels(run.table.pairs, run.labels, out / "labels.csv", ids)
    write_cost_curve(run.costs, out / "elbow.csv")
    _write_scatter(run.table, run.labels, cfg.rng_seed, params.restarts, out)
    write_importances(run.model, out / "importances.csv")
    _write_boundaries(run.model, resolution, out)
    write_theta_sweep(
        {entry.theta: entry.accuracy for entry in run.report.theta_sweep},
        out / "theta_sweep.csv",
    )
    write_verdicts(
        verdict_rows(
            run.graph,
            run.labels_by_pair,
            AggregationConfig(theta=params.theta),
            run.reported,
        ),
        out / "verdicts.csv",
        ids,
    )
    print(f"Chosen k: {run.report.elbow_k}")
    _print_training(run.report.held_out_accuracy, run.model)
    print(
        f"Aggregate accuracy at theta={params.theta:g}: {run.report.accuracy:.4f} "
        f"(direct only {run.report.direct_only_accuracy:.4f})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER_ERROR, f"{self.prog}: error: {message}\n")


def _theta(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid theta {text!r}") from None
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"theta must lie in (0, 1], got {value}")
    return value


def _thetas(text: str) -> list[float]:
    return [_theta(part) for part in text.split(",") if part.strip()]


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {value}")
    return value


def _configure_logging(level_name: str) -> None:
    level = logging.getLevelName(level_name.strip().upper())
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser; defaults come from the environment."""
    common = _Parser(add_help=False)
    common.add_argument(
        "--seed",
        type=int,
        default=int(os.getenv("SIOT_TRUST_SEED", "0")),
        help="Root seed of every random draw (default: %(default)s)",
    )
    common.add_argument(
        "--workers",
        type=int,
        default=int(os.getenv("SIOT_TRUST_WORKERS", "1")),
        help="Worker threads; results do not depend on it (default: %(default)s)",
    )
    theta = _Parser(add_help=False)
    theta.add_argument(
        "--theta",
        type=_theta,
        default=os.getenv("SIOT_TRUST_THETA", "0.7"),
        help="Recommendation threshold in (0, 1] (default: %(default)s)",
    )
    clustering = _Parser(add_help=False)
    clustering.add_argument("--k-min", type=int, default=1)
    clustering.add_argument("--k-max", type=int, default=8)
    clustering.add_argument(
        "--restarts",
        type=int,
        default=20,
        help="k-means restarts per k (default: %(default)s)",
    )
    forest = _Parser(add_help=False)
    forest.add_argument("--trees", type=int, default=100)
    forest.add_argument("--max-depth", type=int, default=8)
    forest.add_argument("--train-fraction", type=_fraction, default=0.8)
    forest.add_argument(
        "--resolution",
        type=int,
        default=50,
        help="Decision-boundary grid cells per axis (default: %(default)s)",
    )

    parser = _Parser(
        prog="siot-trust",
        description="Trust estimation for Social IoT interaction traces",
    )
    parser.add_argument(
        "--version", "-v", action="version", version=f"siot-trust {__version__}"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    features = commands.add_parser(
        "features", parents=[common], help="Extract the feature matrix of a trace"
    )
    features.add_argument("trace_dir")
    features.add_argument("--out", required=True)

    label = commands.add_parser(
        "label",
        parents=[common, clustering],
        help="Select k and label pairs by k-means",
    )
    label.add_argument("features_file")
    label.add_argument("--out", required=True)
    label.add_argument("--plot-dir")

    train = commands.add_parser(
        "train", parents=[common, forest], help="Train the random forest"
    )
    train.add_argument("features_file")
    train.add_argument("labels_file")
    train.add_argument("--out", required=True)
    train.add_argument("--plot-dir")

    aggregate = commands.add_parser(
        "aggregate",
        parents=[common, theta],
        help="Fuse direct trust and recommendations into verdicts",
    )
    aggregate.add_argument("trace_dir")
    aggregate.add_argument("labels_file")
    aggregate.add_argument("--out", required=True)
    aggregate.add_argument("--sweep", type=_thetas, help="Comma-separated thetas")
    aggregate.add_argument("--ground-truth")
    aggregate.add_argument("--sweep-out")

    simulate = commands.add_parser(
        "simulate",
        parents=[common, theta, clustering, forest],
        help="Generate a synthetic trace, optionally run the full pipeline",
    )
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--nodes", type=int, default=76)
    simulate.add_argument("--malicious-fraction", type=float, default=0.2)
    simulate.add_argument("--communities", type=int, default=3)
    simulate.add_argument("--interactions", type=int, default=18_226)
    simulate.add_argument("--duration", type=int, default=4 * 24 * 3600)
    simulate.add_argument("--attack", default="none")
    simulate.add_argument("--attacker-fraction", type=float, default=0.0)
    simulate.add_argument("--intensity", type=float, default=1.0)
    simulate.add_argument("--full-pipeline", action="store_true")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "features":
        return cmd_features(args.trace_dir, args.out)
    if args.command == "label":
        return cmd_label(
            args.features_file,
            args.out,
            (args.k_min, args.k_max),
            args.seed,
            args.restarts,
            args.workers,
            args.plot_dir,
        )
    if args.command == "train":
        return cmd_train(
            args.features_file,
            args.labels_file,
            args.out,
            args.train_fraction,
            args.seed,
            args.trees,
            args.max_depth,
            args.workers,
            args.resolution,
            args.plot_dir,
        )
    if args.command == "aggregate":
        return cmd_aggregate(
            args.trace_dir,
            args.labels_file,
            args.theta,
            args.out,
            args.sweep,
            args.ground_truth,
            args.sweep_out,
        )
    return _simulate(args)


@_exit_codes
def _simulate(args: argparse.Namespace) -> int:
    cfg = SimConfig(
        node_count=args.nodes,
        malicious_fraction=args.malicious_fraction,
        community_count=args.communities,
        interaction_count=args.interactions,
        duration=args.duration,
        rng_seed=args.seed,
    )
    attack = AttackSpec(args.attack, args.attacker_fraction, args.intensity)
    params = PipelineParams(
        theta=args.theta,
        k_min=args.k_min,
        k_max=args.k_max,
        restarts=args.restarts,
        tree_count=args.trees,
        max_depth=args.max_depth,
        train_fraction=args.train_fraction,
        workers=args.workers,
    )
    return cmd_simulate(
        cfg, args.out, attack, params, args.full_pipeline, args.resolution
    )


def run(argv: Sequence[str] | None = None) -> int:
    """Parse *argv*, configure logging and run the chosen subcommand."""
    env_path = Path(__file__).resolve().parent / ".env"
    load_dotenv(dotenv_path=env_path)
    _configure_logging(os.getenv("SIOT_TRUST_LOG", "WARNING"))
    args = build_parser().parse_args(argv)
    return _dispatch(args)


def main(argv: Sequence[str] | None = None) -> None:
    """Entry point of the ``siot-trust`` console script."""
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
