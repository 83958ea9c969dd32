"""Multi-class random forest over trust features.

Trees are grown on bootstrap samples with Gini impurity, a random subset of
candidate features per split and a depth cap. Feature importance is the mean
decrease in impurity, normalized to sum to 1.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from siot_trust.clustering import TrustLabel
from siot_trust.features import FEATURE_NAMES, TrustFeatureVector
from siot_trust.seeding import derive_seed, spawn_seeds

logger = logging.getLogger(__name__)

MODEL_FORMAT = "siot-trust-forest"
MODEL_VERSION = 1
CLASS_COUNT = len(TrustLabel)
MIN_SAMPLES = 10

# Order in which tied votes are resolved: untrustworthy, neutral, trustworthy.
TIE_ORDER = (TrustLabel.UNTRUSTWORTHY, TrustLabel.NEUTRAL, TrustLabel.TRUSTWORTHY)


class InsufficientDataError(ValueError):
    """Raised when there are too few samples to train and evaluate a forest."""


class ModelFormatError(ValueError):
    """Raised when a serialized model cannot be read."""


@dataclass(frozen=True)
class SplitSpec:
    """Seeded train/held-out split."""

    train_fraction: float = 0.8
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )


@dataclass(frozen=True)
class ForestParams:
    """Forest hyperparameters."""

    tree_count: int = 100
    max_depth: int = 8
    max_features: int = 2
    min_samples_split: int = 2

    def __post_init__(self) -> None:
        if self.tree_count < 1:
            raise ValueError(f"tree_count must be >= 1, got {self.tree_count}")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if not 1 <= self.max_features <= len(FEATURE_NAMES):
            raise ValueError(
                f"max_features must lie in [1, {len(FEATURE_NAMES)}], "
                f"got {self.max_features}"
            )
        if self.min_samples_split < 2:
            raise ValueError(
                f"min_samples_split must be >= 2, got {self.min_samples_split}"
            )


@dataclass(frozen=True)
class TreeNode:
    """A decision-tree node; a leaf when :attr:`feature` is ``None``.

    Samples with ``x[feature] <= threshold`` go left.
    """

    counts: tuple[int, ...]
    feature: int | None = None
    threshold: float | None = None
    left: TreeNode | None = None
    right: TreeNode | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def vote(self) -> TrustLabel:
        return _resolve(self.counts)


@dataclass(frozen=True, eq=False)
class ForestModel:
    """Trained forest.

    :ivar trees: Root node of every tree.
    :ivar feature_importances: Normalized mean decrease in impurity, in
        ``FEATURE_NAMES`` order.
    :ivar rng_seed: Seed the forest was grown from.
    :ivar params: Hyperparameters.
    :ivar training_accuracy: Accuracy on the training split.
    """

    trees: tuple[TreeNode, ...]
    feature_importances: tuple[float, ...]
    rng_seed: int
    params: ForestParams
    training_accuracy: float = 0.0

    @property
    def tree_count(self) -> int:
        return len(self.trees)

    @property
    def is_degenerate(self) -> bool:
        """Whether no tree contains a split."""
        return all(tree.is_leaf for tree in self.trees)


def _resolve(counts: Sequence[int] | np.ndarray) -> TrustLabel:
    best = max(counts[label] for label in TIE_ORDER)
    return next(label for label in TIE_ORDER if counts[label] == best)


def _best_split(
    x: np.ndarray, y: np.ndarray, candidates: np.ndarray
) -> tuple[int, float, float] | None:
    """Return ``(feature, threshold, impurity_decrease)`` of the best split.

    Impurities are weighted by sample counts. Thresholds are midpoints
    between consecutive distinct values.
    """
    n = len(y)
    onehot = np.eye(CLASS_COUNT)[y]
    totals = onehot.sum(axis=0)
    parent = n * (1.0 - ((totals / n) ** 2).sum())
    left_sizes = np.arange(1, n)
    right_sizes = n - left_sizes

    best: tuple[int, float, float] | None = None
    best_impurity = np.inf
    for feature in candidates:
        order = np.argsort(x[:, feature], kind="stable")
        values = x[order, feature]
        valid = values[:-1] < values[1:]
        if not valid.any():
            continue
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = totals - left
        impurity = left_sizes * (
            1.0 - ((left / left_sizes[:, None]) ** 2).sum(axis=1)
        ) + right_sizes * (1.0 - ((right / right_sizes[:, None]) ** 2).sum(axis=1))
        impurity = np.where(valid, impurity, np.inf)
        position = int(impurity.argmin())
        if impurity[position] < best_impurity:
            best_impurity = float(impurity[position])
            threshold = (values[position] + values[position + 1]) / 2.0
            if threshold >= values[position + 1]:
                threshold = values[position]
            best = (int(feature), float(threshold), parent - best_impurity)
    if best is None or best[2] <= 1e-12:
        return None
    return best


def _grow(
    x: np.ndarray,
    y: np.ndarray,
    depth: int,
    params: ForestParams,
    rng: np.random.Generator,
    importance: np.ndarray,
) -> TreeNode:
    counts = np.bincount(y, minlength=CLASS_COUNT)
    leaf = TreeNode(counts=tuple(int(count) for count in counts))
    if (
        depth >= params.max_depth
        or len(y) < params.min_samples_split
        or np.count_nonzero(counts) <= 1
    ):
        return leaf
    candidates = rng.choice(x.shape[1], size=params.max_features, replace=False)
    split = _best_split(x, y, candidates)
    if split is None:
        return leaf
    feature, threshold, decrease = split
    importance[feature] += decrease
    mask = x[:, feature] <= threshold
    return TreeNode(
        counts=leaf.counts,
        feature=feature,
        threshold=threshold,
        left=_grow(x[mask], y[mask], depth + 1, params, rng, importance),
        right=_grow(x[~mask], y[~mask], depth + 1, params, rng, importance),
    )


def _fit_tree(
    x: np.ndarray, y: np.ndarray, params: ForestParams, seed: np.random.SeedSequence
) -> tuple[TreeNode, np.ndarray]:
    rng = np.random.default_rng(seed)
    sample = rng.integers(0, len(y), size=len(y))
    importance = np.zeros(x.shape[1])
    root = _grow(x[sample], y[sample], 0, params, rng, importance)
    return root, importance / len(y)


def fit_forest(
    x: np.ndarray,
    y: np.ndarray,
    params: ForestParams,
    rng_seed: int,
    workers: int = 1,
) -> ForestModel:
    """Grow a forest on the full ``(x, y)`` set.

    Each tree owns an independent child seed, so the model is identical for
    any number of *workers*.
    """
    seeds = spawn_seeds(rng_seed, params.tree_count)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fitted = list(pool.map(lambda s: _fit_tree(x, y, params, s), seeds))
    else:
        fitted = [_fit_tree(x, y, params, seed) for seed in seeds]

    mean_decrease = np.mean([importance for _, importance in fitted], axis=0)
    total = mean_decrease.sum()
    if total > 0:
        importances = mean_decrease / total
    else:
        importances = np.full(x.shape[1], 1.0 / x.shape[1])
    return ForestModel(
        trees=tuple(root for root, _ in fitted),
        feature_importances=tuple(float(value) for value in importances),
        rng_seed=rng_seed,
        params=params,
    )


def _leaf_for(node: TreeNode, row: np.ndarray) -> TreeNode:
    while not node.is_leaf:
        assert node.threshold is not None and node.feature is not None
        child = node.left if row[node.feature] <= node.threshold else node.right
        assert child is not None
        node = child
    return node


def _tree_votes(
    node: TreeNode, x: np.ndarray, rows: np.ndarray, out: np.ndarray
) -> None:
    if node.is_leaf:
        out[rows, int(node.vote)] += 1
        return
    assert node.left is not None and node.right is not None
    mask = x[rows, node.feature] <= node.threshold
    _tree_votes(node.left, x, rows[mask], out)
    _tree_votes(node.right, x, rows[~mask], out)


def vote_counts(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Return an ``n x 3`` matrix of tree votes per class."""
    data = np.asarray(x, dtype=float).reshape(-1, len(FEATURE_NAMES))
    votes = np.zeros((len(data), CLASS_COUNT), dtype=int)
    rows = np.arange(len(data))
    for tree in model.trees:
        _tree_votes(tree, data, rows, votes)
    return votes


def predict_many(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Predict a label per row of *x* by majority vote."""
    return np.array([int(_resolve(row)) for row in vote_counts(model, x)], dtype=int)


def predict(
    model: ForestModel, v: TrustFeatureVector | Sequence[float]
) -> TrustLabel:
    """Classify one feature vector by majority vote over the trees.

    Tied votes resolve to untrustworthy first, then neutral.
    """
    values = v.as_tuple() if isinstance(v, TrustFeatureVector) else tuple(v)
    row = np.asarray(values, dtype=float)
    counts = [0] * CLASS_COUNT
    for tree in model.trees:
        counts[_leaf_for(tree, row).vote] += 1
    return _resolve(counts)


def feature_importances(model: ForestModel) -> tuple[float, ...]:
    """Importances ordered ``(FS, CoI, CoP, Reward)``, summing to 1."""
    return model.feature_importances


def accuracy(model: ForestModel, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of rows whose predicted label equals *y*."""
    if len(y) == 0:
        return 0.0
    return float((predict_many(model, x) == np.asarray(y)).mean())


def train_forest(
    features: np.ndarray | Sequence[Sequence[float]],
    labels: Sequence[int] | np.ndarray,
    split: SplitSpec | None = None,
    tree_count: int = 100,
    max_depth: int = 8,
    max_features: int = 2,
    workers: int = 1,
) -> tuple[ForestModel, float]:
    """Train on a seeded split and report held-out accuracy.

    :param features: ``n x 4`` feature matrix.
    :param labels: Trust label per row.
    :param split: Train/held-out split; 80/20 with seed 0 by default.
    :param tree_count: Number of trees.
    :param max_depth: Depth cap per tree.
    :param max_features: Candidate features drawn per split.
    :param workers: Threads used to grow trees.
    :return: The model and its accuracy on the held-out rows.
    :raises InsufficientDataError: With fewer than 10 samples.
    :raises ValueError: If shapes or labels are invalid.
    """
    split = split or SplitSpec()
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or x.shape[1] != len(FEATURE_NAMES):
        raise ValueError(f"features must be n x {len(FEATURE_NAMES)}")
    if len(x) != len(y):
        raise ValueError(f"{len(x)} feature rows but {len(y)} labels")
    if len(y) < MIN_SAMPLES:
        raise InsufficientDataError(
            f"need at least {MIN_SAMPLES} samples to train, got {len(y)}"
        )
    if not set(np.unique(y)) <= {int(label) for label in TrustLabel}:
        raise ValueError("labels must be 0, 1 or 2")

    order = np.random.default_rng(split.rng_seed).permutation(len(y))
    train_size = min(len(y) - 1, max(1, round(split.train_fraction * len(y))))
    train, held_out = order[:train_size], order[train_size:]
    if len(np.unique(y[train])) == 1:
        logger.warning(
            "Training set holds a single class (%d); the forest is constant",
            int(y[train][0]),
        )

    params = ForestParams(
        tree_count=tree_count, max_depth=max_depth, max_features=max_features
    )
    model = fit_forest(
        x[train], y[train], params, derive_seed(split.rng_seed, "forest"), workers
    )
    model = ForestModel(
        trees=model.trees,
        feature_importances=model.feature_importances,
        rng_seed=model.rng_seed,
        params=params,
        training_accuracy=accuracy(model, x[train], y[train]),
    )
    if model.is_degenerate:
        logger.warning("No tree found a split; importances are uniform")
    held_out_accuracy = accuracy(model, x[held_out], y[held_out])
    logger.info(
        "Forest: %d trees, training accuracy %.4f, held-out accuracy %.4f",
        model.tree_count,
        model.training_accuracy,
        held_out_accuracy,
    )
    return model, held_out_accuracy


def _resolve_feature(feature: int | str) -> int:
    if isinstance(feature, str):
        if feature not in FEATURE_NAMES:
            raise ValueError(f"unknown feature {feature!r}; expected {FEATURE_NAMES}")
        return FEATURE_NAMES.index(feature)
    if not 0 <= feature < len(FEATURE_NAMES):
        raise ValueError(f"feature index {feature} out of range")
    return feature


def decision_boundary_grid(
    model: ForestModel,
    feature_pair: tuple[int | str, int | str],
    resolution: int,
    fixed: Sequence[float] = (0.5, 0.5, 0.5, 0.5),
) -> np.ndarray:
    """Predict labels on a lattice over two features.

    Cell ``(row, col)`` evaluates the pair at ``((col + 0.5) / resolution,
    (row + 0.5) / resolution)``; the other two features keep their *fixed*
    values.

    :return: ``resolution x resolution`` array of labels.
    """
    x_feature, y_feature = (_resolve_feature(f) for f in feature_pair)
    if x_feature == y_feature:
        raise ValueError("feature_pair must name two different features")
    if resolution < 1:
        raise ValueError(f"resolution must be >= 1, got {resolution}")
    if len(fixed) != len(FEATURE_NAMES):
        raise ValueError(f"fixed must hold {len(FEATURE_NAMES)} values")
    centres = (np.arange(resolution) + 0.5) / resolution
    xs, ys = np.meshgrid(centres, centres)
    points = np.tile(np.asarray(fixed, dtype=float), (resolution * resolution, 1))
    points[:, x_feature] = xs.ravel()
    points[:, y_feature] = ys.ravel()
    return predict_many(model, points).reshape(resolution, resolution)


def grid_frame(grid: np.ndarray) -> pd.DataFrame:
    """Flatten a boundary grid into ``x,y,label`` rows."""
    resolution = grid.shape[0]
    centres = (np.arange(resolution) + 0.5) / resolution
    xs, ys = np.meshgrid(centres, centres)
    return pd.DataFrame({"x": xs.ravel(), "y": ys.ravel(), "label": grid.ravel()})


def write_importances(model: ForestModel, path: str | Path) -> None:
    """Write ``feature,importance`` rows."""
    pd.DataFrame(
        {"feature": list(FEATURE_NAMES), "importance": model.feature_importances}
    ).to_csv(Path(path), index=False, float_format="%.6f", lineterminator="\n")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _node_to_dict(node: TreeNode) -> dict[str, Any]:
    if node.is_leaf:
        return {"counts": list(node.counts)}
    assert node.left is not None and node.right is not None
    return {
        "counts": list(node.counts),
        "feature": node.feature,
        "threshold": repr(node.threshold),
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(data: dict[str, Any]) -> TreeNode:
    counts = tuple(int(count) for count in data["counts"])
    if "feature" not in data:
        return TreeNode(counts=counts)
    return TreeNode(
        counts=counts,
        feature=int(data["feature"]),
        threshold=float(data["threshold"]),
        left=_node_from_dict(data["left"]),
        right=_node_from_dict(data["right"]),
    )


def dump_model(model: ForestModel) -> str:
    """Serialize *model* to a versioned JSON document.

    Thresholds and importances are stored as ``repr`` strings so that
    :func:`load_model` restores them bit for bit.
    """
    document = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "rng_seed": model.rng_seed,
        "params": asdict(model.params),
        "features": list(FEATURE_NAMES),
        "feature_importances": [repr(value) for value in model.feature_importances],
        "training_accuracy": repr(model.training_accuracy),
        "trees": [_node_to_dict(tree) for tree in model.trees],
    }
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def load_model(text: str) -> ForestModel:
    """Restore a model serialized by :func:`dump_model`.

    :raises ModelFormatError: On an unknown format or version, or missing keys.
    """
    try:
        document = json.loads(text)
        if document.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"not a {MODEL_FORMAT} document")
        if document.get("version") != MODEL_VERSION:
            raise ModelFormatError(
                f"unsupported model version {document.get('version')!r}"
            )
        return ForestModel(
            trees=tuple(_node_from_dict(tree) for tree in document["trees"]),
            feature_importances=tuple(
                float(value) for value in document["feature_importances"]
            ),
            rng_seed=int(document["rng_seed"]),
            params=ForestParams(**document["params"]),
            training_accuracy=float(document["training_accuracy"]),
        )
    except (AttributeError, KeyError, TypeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"malformed model document: {e}") from e


def save_model(model: ForestModel, path: str | Path) -> None:
    """Write :func:`dump_model` output to *path*."""
    Path(path).write_text(dump_model(model) + "\n", encoding="utf-8")
