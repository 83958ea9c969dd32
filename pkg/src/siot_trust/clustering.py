"""Unsupervised trust labeling: Lloyd's k-means, elbow selection, labeling."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
import pandas as pd

from siot_trust.features import FEATURE_NAMES, FeatureTable
from siot_trust.graph import PairKey, source_pairs
from siot_trust.seeding import derive_seed, spawn_seeds

logger = logging.getLogger(__name__)

# Feature pairs in the order the clustering plots are laid out.
FEATURE_PAIRS: tuple[tuple[str, str], ...] = (
    ("fs", "coi"),
    ("fs", "reward"),
    ("fs", "cop"),
    ("coi", "reward"),
    ("coi", "cop"),
    ("reward", "cop"),
)


class TrustLabel(IntEnum):
    """Direct-trust class of an ordered pair."""

    UNTRUSTWORTHY = 0
    TRUSTWORTHY = 1
    NEUTRAL = 2


class InfeasibleClusteringError(ValueError):
    """Raised when k-means cannot run on the given samples."""


class ClusterLabelingError(ValueError):
    """Raised when a clustering cannot be mapped onto the three trust labels."""


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    """Outcome of one k-means fit.

    :ivar k: Number of clusters.
    :ivar centroids: ``k x d`` centroid matrix.
    :ivar assignments: Cluster index per sample, each the nearest centroid.
    :ivar cost: Sum of squared distances of samples to their centroids.
    :ivar iterations: Lloyd iterations performed.
    :ivar cost_history: Cost after every assignment step, non-increasing.
    """

    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    cost: float
    iterations: int
    cost_history: tuple[float, ...]


def _as_samples(samples: np.ndarray | Sequence[Sequence[float]]) -> np.ndarray:
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
        raise InfeasibleClusteringError("samples must be a non-empty 2-D array")
    if not (np.isfinite(data).all() and data.min() >= 0.0 and data.max() <= 1.0):
        raise InfeasibleClusteringError("sample values must be finite and in [0, 1]")
    return data


def _assign(data: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, float]:
    distances = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assignments = distances.argmin(axis=1)
    cost = float(distances[np.arange(len(data)), assignments].sum())
    return assignments, cost


def _update(
    data: np.ndarray, assignments: np.ndarray, centroids: np.ndarray
) -> np.ndarray:
    updated = centroids.copy()
    for cluster in range(len(centroids)):
        members = data[assignments == cluster]
        # an emptied cluster keeps its previous centroid
        if len(members):
            updated[cluster] = members.mean(axis=0)
    return updated


def _lloyd(
    data: np.ndarray,
    distinct: np.ndarray,
    k: int,
    seed: np.random.SeedSequence,
    max_iters: int,
) -> ClusteringResult:
    rng = np.random.default_rng(seed)
    centroids = distinct[rng.choice(len(distinct), size=k, replace=False)].copy()
    assignments, cost = _assign(data, centroids)
    history = [cost]
    iterations = 0
    for iterations in range(1, max_iters + 1):
        centroids = _update(data, assignments, centroids)
        updated, cost = _assign(data, centroids)
        assert cost <= history[-1] + 1e-9 * max(1.0, history[-1]), "cost increased"
        history.append(cost)
        stable = np.array_equal(updated, assignments)
        assignments = updated
        if stable:
            break
    return ClusteringResult(
        k=k,
        centroids=centroids,
        assignments=assignments,
        cost=cost,
        iterations=iterations,
        cost_history=tuple(history),
    )


def kmeans(
    samples: np.ndarray | Sequence[Sequence[float]],
    k: int,
    rng_seed: int,
    max_iters: int = 300,
    restarts: int = 1,
    workers: int = 1,
) -> ClusteringResult:
    """Cluster *samples* with Lloyd's algorithm, keeping the best restart.

    Every restart starts from ``k`` distinct samples drawn uniformly and
    iterates until the assignments stop changing or *max_iters* is reached.
    Restarts own independent child seeds of *rng_seed*, so the result does not
    depend on *workers*.

    :param samples: ``n x d`` matrix with values in ``[0, 1]``.
    :param k: Number of clusters, at least 1.
    :param rng_seed: Seed for centroid initialization.
    :param max_iters: Iteration cap per restart.
    :param restarts: Independent initializations; the lowest cost wins and
        ties go to the earliest restart.
    :param workers: Threads used to run restarts.
    :return: The best :class:`ClusteringResult`.
    :raises InfeasibleClusteringError: If *k* < 1 or exceeds the number of
        distinct samples.
    """
    data = _as_samples(samples)
    if k < 1:
        raise InfeasibleClusteringError(f"k must be >= 1, got {k}")
    if restarts < 1:
        raise InfeasibleClusteringError(f"restarts must be >= 1, got {restarts}")
    distinct = np.unique(data, axis=0)
    if k > len(distinct):
        raise InfeasibleClusteringError(
            f"k={k} exceeds the {len(distinct)} distinct samples"
        )

    seeds = spawn_seeds(rng_seed, restarts)
    if workers > 1 and restarts > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(
                pool.map(lambda s: _lloyd(data, distinct, k, s, max_iters), seeds)
            )
    else:
        runs = [_lloyd(data, distinct, k, seed, max_iters) for seed in seeds]
    best = min(runs, key=lambda run: run.cost)
    logger.debug(
        "k-means k=%d: cost %.6f after %d iterations (best of %d)",
        k,
        best.cost,
        best.iterations,
        restarts,
    )
    return best


def cost_curve(
    samples: np.ndarray | Sequence[Sequence[float]],
    k_min: int = 1,
    k_max: int = 8,
    rng_seed: int = 0,
    restarts: int = 20,
    max_iters: int = 300,
    workers: int = 1,
) -> dict[int, float]:
    """Return the best k-means cost for every k in ``[k_min, k_max]``."""
    if k_min < 1 or k_max < k_min:
        raise InfeasibleClusteringError(
            f"invalid k range [{k_min}, {k_max}]; need 1 <= k_min <= k_max"
        )
    return {
        k: kmeans(
            samples,
            k,
            derive_seed(rng_seed, "elbow", k),
            max_iters=max_iters,
            restarts=restarts,
            workers=workers,
        ).cost
        for k in range(k_min, k_max + 1)
    }


def elbow_from_costs(costs: Mapping[int, float]) -> int:
    """Pick the k with the largest second difference of the cost curve.

    Only interior k (with both neighbours on the curve) compete; ties go to
    the smaller k. A curve without interior points yields its smallest k.
    """
    ks = sorted(costs)
    interior = [k for k in ks if k - 1 in costs and k + 1 in costs]
    if not interior:
        return ks[0]
    return max(
        interior,
        key=lambda k: (costs[k - 1] - 2 * costs[k] + costs[k + 1], -k),
    )


def elbow_select_k(
    samples: np.ndarray | Sequence[Sequence[float]],
    k_min: int = 1,
    k_max: int = 8,
    rng_seed: int = 0,
    restarts: int = 20,
    max_iters: int = 300,
    workers: int = 1,
) -> int:
    """Choose the cluster count at the knee of the k-vs-cost curve.

    :raises InfeasibleClusteringError: If *k_max* exceeds the number of
        distinct samples.
    """
    costs = cost_curve(samples, k_min, k_max, rng_seed, restarts, max_iters, workers)
    chosen = elbow_from_costs(costs)
    logger.info(
        "Elbow curve %s -> k=%d",
        ", ".join(f"{k}:{cost:.4f}" for k, cost in costs.items()),
        chosen,
    )
    return chosen


def cluster_label_map(result: ClusteringResult) -> dict[int, TrustLabel]:
    """Map cluster indices to trust labels by centroid norm.

    Smallest norm is untrustworthy, largest trustworthy, the other neutral;
    equal norms keep cluster index order.

    :raises ClusterLabelingError: If the clustering does not have 3 clusters.
    """
    if result.k != 3:
        raise ClusterLabelingError(f"labeling needs exactly 3 clusters, got {result.k}")
    order = np.argsort(np.linalg.norm(result.centroids, axis=1), kind="stable")
    return {
        int(order[0]): TrustLabel.UNTRUSTWORTHY,
        int(order[1]): TrustLabel.NEUTRAL,
        int(order[2]): TrustLabel.TRUSTWORTHY,
    }


def label_clusters(result: ClusteringResult) -> list[TrustLabel]:
    """Return the trust label of every clustered sample."""
    mapping = cluster_label_map(result)
    return [mapping[int(cluster)] for cluster in result.assignments]


def pairwise_scatter(
    table: FeatureTable,
    labels: Sequence[TrustLabel],
    rng_seed: int,
    restarts: int = 20,
    max_iters: int = 300,
) -> dict[tuple[str, str], pd.DataFrame]:
    """Build scatter data for each feature pair.

    Each frame has columns ``x,y,label,pair_label``: ``label`` is the label
    from clustering all four features, ``pair_label`` the label from
    clustering only that pair. When the projection has fewer than three
    distinct points, ``pair_label`` repeats ``label``.
    """
    frames = {}
    for first, second in FEATURE_PAIRS:
        columns = [FEATURE_NAMES.index(first), FEATURE_NAMES.index(second)]
        projected = table.values[:, columns]
        try:
            result = kmeans(
                projected,
                3,
                derive_seed(rng_seed, "pairwise", first, second),
                max_iters=max_iters,
                restarts=restarts,
            )
            pair_labels = [int(label) for label in label_clusters(result)]
        except InfeasibleClusteringError:
            logger.debug("Too few distinct points to cluster %s/%s", first, second)
            pair_labels = [int(label) for label in labels]
        frames[(first, second)] = pd.DataFrame(
            {
                "x": projected[:, 0],
                "y": projected[:, 1],
                "label": [int(label) for label in labels],
                "pair_label": pair_labels,
            }
        )
    return frames


def write_labels(
    pairs: Sequence[PairKey],
    labels: Sequence[TrustLabel],
    path: str | Path,
    source_ids: Sequence[int] | None = None,
) -> None:
    """Write per-pair labels as ``trustor,trustee,label``, in source ids if given."""
    pairs = source_pairs(pairs, source_ids)
    pd.DataFrame(
        {
            "trustor": [pair.trustor for pair in pairs],
            "trustee": [pair.trustee for pair in pairs],
            "label": [int(label) for label in labels],
        }
    ).to_csv(Path(path), index=False, lineterminator="\n")


def read_labels(path: str | Path) -> dict[PairKey, TrustLabel]:
    """Read a ``trustor,trustee,label`` file into a direct-trust table.

    :raises ValueError: On missing columns or labels outside ``{0, 1, 2}``.
    """
    frame = pd.read_csv(Path(path), comment="#")
    missing = {"trustor", "trustee", "label"} - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {', '.join(sorted(missing))}")
    table = {}
    for trustor, trustee, label in zip(
        frame["trustor"], frame["trustee"], frame["label"], strict=True
    ):
        table[PairKey(int(trustor), int(trustee))] = TrustLabel(int(label))
    return table


def write_cost_curve(costs: Mapping[int, float], path: str | Path) -> None:
    """Write the elbow curve as ``k,cost``."""
    pd.DataFrame({"k": list(costs), "cost": list(costs.values())}).to_csv(
        Path(path), index=False, float_format="%.6f", lineterminator="\n"
    )
