"""Synthetic SIoT traces with planted honest and malicious nodes, and attacks.

Honest nodes handle what they receive successfully with high probability and
send few messages; malicious nodes mostly fail and flood their partners with
messages. Whether a record succeeds is decided by its target, the node that
receives it. Malicious nodes stay in a single community, which keeps their
community overlap with others low.

Attacks act either on the direct-trust labels that feed recommendations
(ballot stuffing, bad mouthing) or on the interaction log before feature
extraction (self promoting, whitewashing).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import networkx as nx
import numpy as np
import pandas as pd

from siot_trust.clustering import TrustLabel
from siot_trust.graph import (
    InteractionRecord,
    PairKey,
    SocialGraph,
    interacting_pairs,
)
from siot_trust.seeding import derive_seed

logger = logging.getLogger(__name__)

GROUND_TRUTH_FILE = "ground_truth.csv"
HONESTY_FILE = "honesty.csv"

FOUR_DAYS = 4 * 24 * 3600


class SimConfigError(ValueError):
    """Raised for an infeasible simulation or attack configuration."""


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the trace generator.

    :ivar node_count: Number of nodes, at least 2.
    :ivar malicious_fraction: Share of malicious nodes in ``[0, 1)``.
    :ivar community_count: Number of interest communities.
    :ivar interaction_count: Number of interaction records, requests and
        responses together.
    :ivar duration: Trace length in seconds.
    :ivar rng_seed: Seed of every random draw.
    :ivar honest_success: Success probability of requests served by honest nodes.
    :ivar malicious_success: Success probability of requests served by
        malicious nodes.
    :ivar friend_prob_shared: Friendship probability of nodes sharing a
        community.
    :ivar friend_prob_other: Friendship probability of all other node pairs.
    :ivar max_memberships: Most communities an honest node joins, capped by
        ``community_count``. Each honest node draws its own count from 1 up
        to this cap.
    """

    node_count: int = 76
    malicious_fraction: float = 0.2
    community_count: int = 3
    interaction_count: int = 18_226
    duration: int = FOUR_DAYS
    rng_seed: int = 0
    honest_success: float = 0.95
    malicious_success: float = 0.2
    friend_prob_shared: float = 0.5
    friend_prob_other: float = 0.15
    max_memberships: int = 3

    def __post_init__(self) -> None:
        if self.node_count < 2:
            raise SimConfigError(f"node_count must be >= 2, got {self.node_count}")
        if not 0.0 <= self.malicious_fraction < 1.0:
            raise SimConfigError(
                f"malicious_fraction must lie in [0, 1), got {self.malicious_fraction}"
            )
        if self.community_count < 1:
            raise SimConfigError(
                f"community_count must be >= 1, got {self.community_count}"
            )
        if self.interaction_count < 1:
            raise SimConfigError(
                f"interaction_count must be >= 1, got {self.interaction_count}"
            )
        if self.duration < 1:
            raise SimConfigError(f"duration must be >= 1, got {self.duration}")
        if self.rng_seed < 0:
            raise SimConfigError(f"rng_seed must be >= 0, got {self.rng_seed}")
        if self.max_memberships < 1:
            raise SimConfigError(
                f"max_memberships must be >= 1, got {self.max_memberships}"
            )
        for name in (
            "honest_success",
            "malicious_success",
            "friend_prob_shared",
            "friend_prob_other",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SimConfigError(f"{name} must lie in [0, 1], got {value}")

    @property
    def malicious_count(self) -> int:
        return round(self.malicious_fraction * self.node_count)


@dataclass(frozen=True)
class GroundTruth:
    """Planted honesty and the verdict each pair should receive.

    :ivar honest: Honesty flag per node.
    :ivar expected: Expected verdict per interacting pair: 1 iff the trustee
        is honest, regardless of the trustor.
    """

    honest: tuple[bool, ...]
    expected: Mapping[PairKey, int] = field(default_factory=dict)

    @classmethod
    def from_honesty(
        cls, honest: Iterable[bool], pairs: Iterable[PairKey] = ()
    ) -> GroundTruth:
        flags = tuple(bool(flag) for flag in honest)
        return cls(
            honest=flags, expected={pair: int(flags[pair.trustee]) for pair in pairs}
        )

    @property
    def malicious_nodes(self) -> tuple[int, ...]:
        return tuple(node for node, flag in enumerate(self.honest) if not flag)

    def for_pairs(self, pairs: Iterable[PairKey]) -> dict[PairKey, int]:
        """Expected verdicts of *pairs*, which need not have been planted."""
        return {pair: int(self.honest[pair.trustee]) for pair in pairs}


class AttackKind(str, Enum):
    """Supported attacks."""

    NONE = "none"
    BALLOT_STUFFING = "ballot_stuffing"
    BAD_MOUTHING = "bad_mouthing"
    SELF_PROMOTING = "self_promoting"
    WHITEWASHING = "whitewashing"

    @classmethod
    def parse(cls, value: AttackKind | str) -> AttackKind:
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(kind.value for kind in cls)
            raise SimConfigError(
                f"unknown attack {value!r}; expected one of {choices}"
            ) from None

    @property
    def acts_on_labels(self) -> bool:
        return self in (AttackKind.BALLOT_STUFFING, AttackKind.BAD_MOUTHING)

    @property
    def acts_on_trace(self) -> bool:
        return self in (AttackKind.SELF_PROMOTING, AttackKind.WHITEWASHING)


@dataclass(frozen=True)
class AttackSpec:
    """An attack and its strength.

    :ivar kind: Attack kind; strings are parsed into :class:`AttackKind`.
    :ivar attacker_fraction: Share of nodes acting as attackers, in ``[0, 1)``.
    :ivar intensity: Share in ``[0, 1]`` of each attacker's opinions or
        history that is affected.
    """

    kind: AttackKind = AttackKind.NONE
    attacker_fraction: float = 0.0
    intensity: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind.parse(self.kind))
        if not 0.0 <= self.attacker_fraction < 1.0:
            raise SimConfigError(
                f"attacker_fraction must lie in [0, 1), got {self.attacker_fraction}"
            )
        if not 0.0 <= self.intensity <= 1.0:
            raise SimConfigError(
                f"intensity must lie in [0, 1], got {self.intensity}"
            )

    @property
    def is_active(self) -> bool:
        return self.kind is not AttackKind.NONE

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "attacker_fraction": self.attacker_fraction,
            "intensity": self.intensity,
        }


def _memberships(
    cfg: SimConfig, malicious: np.ndarray, rng: np.random.Generator
) -> list[frozenset[int]]:
    cap = min(cfg.max_memberships, cfg.community_count)
    groups = []
    for node in range(cfg.node_count):
        size = 1 if malicious[node] else int(rng.integers(1, cap + 1))
        groups.append(
            frozenset(
                int(community)
                for community in rng.choice(
                    cfg.community_count, size=size, replace=False
                )
            )
        )
    return groups


def _friendships(
    cfg: SimConfig, groups: list[frozenset[int]], rng: np.random.Generator
) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(range(cfg.node_count))
    draws = rng.random((cfg.node_count, cfg.node_count))
    for i in range(cfg.node_count):
        for j in range(i + 1, cfg.node_count):
            shared = bool(groups[i] & groups[j])
            p = cfg.friend_prob_shared if shared else cfg.friend_prob_other
            if draws[i, j] < p:
                graph.add_edge(i, j)
    return graph


def _partner_weights(
    friendships: nx.Graph, groups: list[frozenset[int]], node_count: int
) -> np.ndarray:
    """Target preference: friends 3, community mates 2, anyone else 1."""
    weights = np.ones((node_count, node_count))
    for i in range(node_count):
        for j in range(node_count):
            if groups[i] & groups[j]:
                weights[i, j] = 2.0
    for i, j in friendships.edges():
        weights[i, j] = weights[j, i] = 3.0
    np.fill_diagonal(weights, 0.0)
    return weights


def generate_trace(cfg: SimConfig) -> tuple[SocialGraph, GroundTruth]:
    """Generate a synthetic trace and its planted ground truth.

    Each honest node is active in a seeded number of communities between 1
    and ``min(max_memberships, community_count)``, malicious nodes in a
    single one. Nodes that share a community befriend each other more often.
    Records come in exchanges: a request from a uniform source to a target
    weighted toward friends and community mates, answered one second later
    by a response in the other direction. The receiving node's honesty
    decides each record's success probability.
    Honest senders put 1 to 4 messages in a record, malicious ones 5 to 12.
    An odd ``interaction_count`` drops the last response.

    The same configuration always produces the same trace.

    :raises SimConfigError: If the configuration is infeasible.
    """
    n = cfg.node_count
    order = np.random.default_rng(derive_seed(cfg.rng_seed, "malicious")).permutation(n)
    malicious = np.zeros(n, dtype=bool)
    malicious[order[: cfg.malicious_count]] = True

    groups = _memberships(
        cfg, malicious, np.random.default_rng(derive_seed(cfg.rng_seed, "communities"))
    )
    friendships = _friendships(
        cfg, groups, np.random.default_rng(derive_seed(cfg.rng_seed, "friendships"))
    )

    rng = np.random.default_rng(derive_seed(cfg.rng_seed, "interactions"))
    count = cfg.interaction_count
    exchanges = math.ceil(count / 2)
    cumulative = _partner_weights(friendships, groups, n).cumsum(axis=1)
    requesters = rng.integers(0, n, size=exchanges)
    draws = rng.random(exchanges) * cumulative[requesters, -1]
    responders = (cumulative[requesters] <= draws[:, None]).sum(axis=1)
    asked = rng.integers(0, cfg.duration, size=exchanges)

    sources = np.column_stack([requesters, responders]).ravel()[:count]
    targets = np.column_stack([responders, requesters]).ravel()[:count]
    timestamps = np.column_stack(
        [asked, np.minimum(asked + 1, cfg.duration - 1)]
    ).ravel()[:count]
    success_prob = np.where(
        malicious[targets], cfg.malicious_success, cfg.honest_success
    )
    successes = rng.random(count) < success_prob
    messages = rng.integers(
        np.where(malicious[sources], 5, 1), np.where(malicious[sources], 13, 5)
    )

    graph = SocialGraph.build(
        node_count=n,
        friendships=friendships.edges(),
        memberships=(
            (node, f"c{community}")
            for node, joined in enumerate(groups)
            for community in sorted(joined)
        ),
        interactions=(
            InteractionRecord(
                timestamp=int(timestamps[k]),
                source=int(sources[k]),
                target=int(targets[k]),
                messages=int(messages[k]),
                success=bool(successes[k]),
            )
            for k in range(count)
        ),
    )
    truth = GroundTruth.from_honesty(~malicious, interacting_pairs(graph))
    logger.info(
        "Generated trace: %d nodes (%d malicious), %d friendships, "
        "%d interactions, %d interacting pairs",
        n,
        int(malicious.sum()),
        friendships.number_of_edges(),
        count,
        len(truth.expected),
    )
    return graph, truth


def select_attackers(
    truth: GroundTruth, attacker_fraction: float, rng_seed: int
) -> tuple[int, ...]:
    """Pick ``round(attacker_fraction * N)`` attackers, malicious nodes first.

    Malicious nodes are drawn in seeded order, then honest nodes fill any
    remaining places.

    :return: Sorted attacker ids.
    """
    count = round(attacker_fraction * len(truth.honest))
    rng = np.random.default_rng(derive_seed(rng_seed, "attackers"))
    malicious = truth.malicious_nodes
    honest = [node for node, flag in enumerate(truth.honest) if flag]
    ranked = [malicious[k] for k in rng.permutation(len(malicious))] + [
        honest[k] for k in rng.permutation(len(honest))
    ]
    return tuple(sorted(ranked[:count]))


def affected_count(intensity: float, total: int) -> int:
    """Number of items an attack of *intensity* touches out of *total*."""
    # rounding first keeps 0.3 * 10 from becoming 4
    return min(total, math.ceil(round(intensity * total, 9)))


def _chosen(items: list[Any], intensity: float, seed: int) -> list[Any]:
    """Seeded selection whose result only grows with *intensity*."""
    order = np.random.default_rng(seed).permutation(len(items))
    return [items[k] for k in order[: affected_count(intensity, len(items))]]


def apply_attack(
    labels_by_pair: Mapping[PairKey, TrustLabel | int],
    graph: SocialGraph,
    truth: GroundTruth,
    spec: AttackSpec,
    rng_seed: int,
) -> dict[PairKey, TrustLabel]:
    """Rewrite the labels attackers report as recommenders.

    Ballot stuffing sets a seeded ``ceil(intensity * k)`` of each attacker's
    ``k`` opinions about malicious nodes to trustworthy; bad mouthing sets the
    same share of opinions about honest nodes to untrustworthy. Trace-level
    kinds and ``none`` leave the labels unchanged.

    The result only replaces what recommenders say; each trustor keeps its
    own direct label.

    :raises SimConfigError: If *truth* does not describe *graph*.
    """
    if len(truth.honest) != graph.node_count:
        raise SimConfigError(
            f"ground truth covers {len(truth.honest)} nodes, graph has "
            f"{graph.node_count}"
        )
    perturbed = {pair: TrustLabel(int(label)) for pair, label in labels_by_pair.items()}
    if not spec.kind.acts_on_labels:
        return perturbed

    if spec.kind is AttackKind.BALLOT_STUFFING:
        target_honest, forged = False, TrustLabel.TRUSTWORTHY
    else:
        target_honest, forged = True, TrustLabel.UNTRUSTWORTHY

    attackers = select_attackers(truth, spec.attacker_fraction, rng_seed)
    by_trustor: dict[int, list[PairKey]] = {attacker: [] for attacker in attackers}
    for pair in sorted(perturbed):
        if pair.trustor in by_trustor and truth.honest[pair.trustee] == target_honest:
            by_trustor[pair.trustor].append(pair)

    changed = 0
    for attacker, opinions in by_trustor.items():
        seed = derive_seed(rng_seed, "attack", spec.kind.value, attacker)
        for pair in _chosen(opinions, spec.intensity, seed):
            changed += perturbed[pair] != forged
            perturbed[pair] = forged
    logger.info(
        "%s: %d attackers rewrote %d labels",
        spec.kind.value,
        len(attackers),
        changed,
    )
    return perturbed


def apply_trace_attack(
    graph: SocialGraph, truth: GroundTruth, spec: AttackSpec, rng_seed: int
) -> SocialGraph:
    """Tamper with the interaction log before features are extracted.

    Self promoting turns a seeded ``ceil(intensity * k)`` of the ``k`` failed
    requests each attacker served into successes. Whitewashing drops each
    attacker's oldest records so that its most recent
    ``ceil((1 - intensity) * k)`` remain. Other kinds return *graph* as is.
    """
    if not spec.kind.acts_on_trace:
        return graph
    attackers = select_attackers(truth, spec.attacker_fraction, rng_seed)
    records = list(graph.interactions)

    if spec.kind is AttackKind.SELF_PROMOTING:
        promoted = 0
        for attacker in attackers:
            failed = [
                index
                for index, record in enumerate(records)
                if record.target == attacker and not record.success
            ]
            seed = derive_seed(rng_seed, "attack", spec.kind.value, attacker)
            for index in _chosen(failed, spec.intensity, seed):
                record = records[index]
                records[index] = InteractionRecord(
                    record.timestamp,
                    record.source,
                    record.target,
                    record.messages,
                    True,
                )
                promoted += 1
        logger.info(
            "self_promoting: %d attackers promoted %d records", len(attackers), promoted
        )
        return graph.with_interactions(records)

    dropped: set[int] = set()
    for attacker in attackers:
        involved = [
            index
            for index, record in enumerate(records)
            if attacker in (record.source, record.target)
        ]
        kept = affected_count(1.0 - spec.intensity, len(involved))
        dropped.update(involved[: len(involved) - kept])
    logger.info(
        "whitewashing: %d attackers shed %d records", len(attackers), len(dropped)
    )
    return graph.with_interactions(
        record for index, record in enumerate(records) if index not in dropped
    )


def write_ground_truth(
    graph: SocialGraph, truth: GroundTruth, directory: str | Path
) -> None:
    """Write ``ground_truth.csv`` and ``honesty.csv`` using source ids."""
    base = Path(directory)
    base.mkdir(parents=True, exist_ok=True)
    ids = graph.source_ids
    expected = truth.for_pairs(interacting_pairs(graph))
    pd.DataFrame(
        [
            (ids[pair.trustor], ids[pair.trustee], value)
            for pair, value in expected.items()
        ],
        columns=["trustor", "trustee", "expected"],
    ).to_csv(base / GROUND_TRUTH_FILE, index=False, lineterminator="\n")
    pd.DataFrame(
        {"node_id": list(ids), "honest": [int(flag) for flag in truth.honest]}
    ).to_csv(base / HONESTY_FILE, index=False, lineterminator="\n")
