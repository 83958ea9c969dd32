"""Direct-trust features for ordered node pairs.

Each feature lies in ``[0, 1]``:

- friendship similarity ``|F_i ∩ F_j| / (|F_i| - 1)``, clamped, 0 when
  ``|F_i| <= 1``;
- community-of-interest ``|C_i ∩ C_j| / |C_i|``, 0 when ``C_i`` is empty;
- cooperativeness, the base-2 binary entropy of the trustor's share of the
  pair's message volume, 0 when no messages were exchanged;
- reward ``(Int - Int_U) / Int * exp(-Int_U / Int)`` over all records
  between the pair.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from siot_trust.graph import PairKey, SocialGraph, interacting_pairs, source_pairs

FEATURE_NAMES = ("fs", "coi", "cop", "reward")
FEATURE_COLUMNS = ("trustor", "trustee", "t_fs", "t_coi", "t_cop", "t_reward")


class UndefinedFeatureError(ValueError):
    """Raised when a feature is requested for a pair with no interactions."""


class WeightsError(ValueError):
    """Raised for baseline weights that are negative or do not sum to 1."""


@dataclass(frozen=True)
class TrustFeatureVector:
    """The four direct-trust features of one ordered pair."""

    t_fs: float
    t_coi: float
    t_cop: float
    t_reward: float

    def __post_init__(self) -> None:
        for name, value in zip(FEATURE_NAMES, self.as_tuple(), strict=True):
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise ValueError(f"feature {name} must lie in [0, 1], got {value}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.t_fs, self.t_coi, self.t_cop, self.t_reward)

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> TrustFeatureVector:
        fs, coi, cop, reward = (float(value) for value in values)
        return cls(fs, coi, cop, reward)


@dataclass(frozen=True)
class BaselineWeights:
    """Weights of the linear weighted-sum aggregate; must sum to 1."""

    w1: float = 0.25
    w2: float = 0.25
    w3: float = 0.25
    w4: float = 0.25

    def __post_init__(self) -> None:
        weights = (self.w1, self.w2, self.w3, self.w4)
        if any(weight < 0 for weight in weights):
            raise WeightsError(f"weights must be non-negative, got {weights}")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise WeightsError(f"weights must sum to 1, got {sum(weights)!r}")


def friendship_similarity(graph: SocialGraph, i: int, j: int) -> float:
    """Share of the trustor's other friends that the trustee also befriends."""
    friends_i = graph.friends[i]
    if len(friends_i) <= 1:
        return 0.0
    return min(1.0, len(friends_i & graph.friends[j]) / (len(friends_i) - 1))


def community_of_interest(graph: SocialGraph, i: int, j: int) -> float:
    """Share of the trustor's communities that the trustee also belongs to."""
    communities_i = graph.communities[i]
    if not communities_i:
        return 0.0
    return len(communities_i & graph.communities[j]) / len(communities_i)


def _entropy_term(share: float) -> float:
    # 0 * log(0) is taken as 0
    return -share * math.log2(share) if share > 0.0 else 0.0


def cooperativeness(graph: SocialGraph, i: int, j: int) -> float:
    """Balance of the message volume exchanged between *i* and *j*.

    Symmetric in its arguments: both shares are computed from the raw totals,
    so ``cooperativeness(g, i, j) == cooperativeness(g, j, i)`` exactly.
    """
    sent = graph.history(i, j).messages
    received = graph.history(j, i).messages
    total = sent + received
    if total == 0:
        return 0.0
    return min(1.0, _entropy_term(sent / total) + _entropy_term(received / total))


def reward(graph: SocialGraph, i: int, j: int) -> float:
    """Success rate of the pair's interactions with an exponential penalty.

    :raises UndefinedFeatureError: If *i* and *j* never interacted.
    """
    forward = graph.history(i, j)
    backward = graph.history(j, i)
    interactions = forward.interactions + backward.interactions
    if interactions == 0:
        raise UndefinedFeatureError(f"nodes {i} and {j} have no interactions")
    failures = forward.failures + backward.failures
    return (interactions - failures) / interactions * math.exp(-failures / interactions)


def feature_vector(graph: SocialGraph, i: int, j: int) -> TrustFeatureVector:
    """Compute all four features of the ordered pair ``(i, j)``."""
    return TrustFeatureVector(
        t_fs=friendship_similarity(graph, i, j),
        t_coi=community_of_interest(graph, i, j),
        t_cop=cooperativeness(graph, i, j),
        t_reward=reward(graph, i, j),
    )


def baseline_weighted_trust(v: TrustFeatureVector, w: BaselineWeights) -> float:
    """Weighted-sum aggregate of the four features, in ``[0, 1]``."""
    score = w.w1 * v.t_fs + w.w2 * v.t_coi + w.w3 * v.t_cop + w.w4 * v.t_reward
    return min(1.0, max(0.0, score))


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Feature vectors of many pairs, row-aligned with :attr:`pairs`.

    :ivar pairs: Ordered pairs, one per row.
    :ivar values: ``len(pairs) x 4`` matrix in ``FEATURE_NAMES`` column order.
    """

    pairs: tuple[PairKey, ...]
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.pairs)

    def vector(self, row: int) -> TrustFeatureVector:
        return TrustFeatureVector.from_sequence(self.values[row])


def feature_matrix(
    graph: SocialGraph, pairs: Iterable[PairKey] | None = None
) -> FeatureTable:
    """Compute the feature vectors of *pairs* (default: all interacting pairs).

    :raises UndefinedFeatureError: If a requested pair never interacted.
    """
    selected = tuple(interacting_pairs(graph) if pairs is None else pairs)
    values = np.zeros((len(selected), len(FEATURE_NAMES)))
    for row, (i, j) in enumerate(selected):
        values[row] = feature_vector(graph, i, j).as_tuple()
    return FeatureTable(pairs=selected, values=values)


def write_feature_table(
    table: FeatureTable, path: str | Path, source_ids: Sequence[int] | None = None
) -> None:
    """Write *table* as ``trustor,trustee,t_fs,t_coi,t_cop,t_reward``.

    :param source_ids: Original node ids to write instead of the dense ones.
    """
    pairs = source_pairs(table.pairs, source_ids)
    frame = pd.DataFrame(table.values, columns=list(FEATURE_COLUMNS[2:]))
    frame.insert(0, "trustee", [pair.trustee for pair in pairs])
    frame.insert(0, "trustor", [pair.trustor for pair in pairs])
    frame.to_csv(Path(path), index=False, float_format="%.6f", lineterminator="\n")


def read_feature_table(path: str | Path) -> FeatureTable:
    """Read a feature matrix written by :func:`write_feature_table`.

    :raises ValueError: If columns are missing or values leave ``[0, 1]``.
    """
    frame = pd.read_csv(Path(path), comment="#")
    missing = [column for column in FEATURE_COLUMNS if column not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {', '.join(missing)}")
    values = frame[list(FEATURE_COLUMNS[2:])].to_numpy(dtype=float)
    if values.size and not (
        np.isfinite(values).all() and values.min() >= 0 and values.max() <= 1
    ):
        raise ValueError(f"{path}: feature values must be finite and in [0, 1]")
    pairs = tuple(
        PairKey(int(i), int(j))
        for i, j in zip(frame["trustor"], frame["trustee"], strict=True)
    )
    return FeatureTable(pairs=pairs, values=values.reshape(len(pairs), 4))
