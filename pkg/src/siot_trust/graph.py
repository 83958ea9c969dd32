"""Social graph model and trace ingestion for SIoT interaction logs.

A trace directory holds four UTF-8 CSV files:

- ``nodes.csv`` with header ``node_id``
- ``friends.csv`` with header ``node_id,friend_id`` (directed rows, symmetrized)
- ``communities.csv`` with header ``node_id,community_id``
- ``interactions.csv`` with header ``timestamp,source,target,messages,success``

Blank lines and lines starting with ``#`` are ignored; fields follow the
usual CSV quoting rules. Source node ids may be sparse; they are remapped to
dense ids ``0..N-1`` in ascending order and the original ids are kept in
:attr:`SocialGraph.source_ids`. Every pair-keyed file the package writes
(features, labels, verdicts, ground truth) uses source ids.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, TypeVar

import networkx as nx
import pandas as pd

logger = logging.getLogger(__name__)

V = TypeVar("V")

NODES_FILE = "nodes.csv"
FRIENDS_FILE = "friends.csv"
COMMUNITIES_FILE = "communities.csv"
INTERACTIONS_FILE = "interactions.csv"
NODE_MAP_FILE = "node_map.csv"

NODES_COLUMNS = ("node_id",)
FRIENDS_COLUMNS = ("node_id", "friend_id")
COMMUNITIES_COLUMNS = ("node_id", "community_id")
INTERACTIONS_COLUMNS = ("timestamp", "source", "target", "messages", "success")


class TraceError(ValueError):
    """Base class for trace ingestion and graph validation failures."""


class TraceParseError(TraceError):
    """Raised when a trace file row cannot be parsed.

    :ivar path: File the offending row came from.
    :ivar line: 1-based line number of the offending row.
    """

    def __init__(self, path: str | Path, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class ReferentialIntegrityError(TraceError):
    """Raised when a row references a node that does not exist."""


class GraphValidationError(TraceError):
    """Raised when the graph would violate a structural invariant."""


class PairKey(NamedTuple):
    """Ordered (trustor, trustee) pair; ``(i, j)`` and ``(j, i)`` differ."""

    trustor: int
    trustee: int


class PairHistory(NamedTuple):
    """Aggregate of the records sent in one direction between two nodes."""

    interactions: int
    failures: int
    messages: int


@dataclass(frozen=True)
class InteractionRecord:
    """One directed message exchange or transaction attempt.

    :ivar timestamp: Seconds since trace start.
    :ivar source: Sending node.
    :ivar target: Receiving node, the one whose response decides ``success``.
    :ivar messages: Number of messages carried by the exchange.
    :ivar success: Whether the exchange completed successfully.
    """

    timestamp: int
    source: int
    target: int
    messages: int
    success: bool


@dataclass(frozen=True)
class SocialGraph:
    """Immutable social network with friendships, communities and a log.

    Build instances with :meth:`build`, which enforces the invariants.

    :ivar node_count: Number of nodes; ids are ``0..node_count-1``.
    :ivar friends: Per-node friend set, symmetric and free of self-loops.
    :ivar communities: Per-node community identifiers.
    :ivar interactions: Records sorted by timestamp, stable on ties.
    :ivar source_ids: Original id of each dense node id.
    """

    node_count: int
    friends: tuple[frozenset[int], ...]
    communities: tuple[frozenset[str], ...]
    interactions: tuple[InteractionRecord, ...]
    source_ids: tuple[int, ...]

    @classmethod
    def build(
        cls,
        node_count: int,
        friendships: Iterable[tuple[int, int]] = (),
        memberships: Iterable[tuple[int, str]] = (),
        interactions: Iterable[InteractionRecord] = (),
        source_ids: Sequence[int] | None = None,
    ) -> SocialGraph:
        """Validate raw parts and assemble a graph.

        Friendships are symmetrized by union and interactions are sorted by
        timestamp (stable on ties).

        :param node_count: Number of nodes.
        :param friendships: Friendship rows in either direction.
        :param memberships: ``(node, community_id)`` rows.
        :param interactions: Interaction records in any order.
        :param source_ids: Original id per dense id, identity when omitted.
        :return: The validated graph.
        :raises ReferentialIntegrityError: If any id is not below ``node_count``.
        :raises GraphValidationError: On self-friendship or self-interaction.
        """
        if node_count < 0:
            raise GraphValidationError(f"node_count must be >= 0, got {node_count}")

        friendship_graph = nx.Graph()
        friendship_graph.add_nodes_from(range(node_count))
        for i, j in friendships:
            _check_node(i, node_count, "friendship")
            _check_node(j, node_count, "friendship")
            friendship_graph.add_edge(i, j)
        loops = list(nx.selfloop_edges(friendship_graph))
        if loops:
            raise GraphValidationError(f"node {loops[0][0]} cannot befriend itself")

        groups: list[set[str]] = [set() for _ in range(node_count)]
        for node, community in memberships:
            _check_node(node, node_count, "community membership")
            groups[node].add(str(community))

        records = list(interactions)
        for record in records:
            _check_node(record.source, node_count, "interaction")
            _check_node(record.target, node_count, "interaction")
            if record.source == record.target:
                raise GraphValidationError(
                    f"interaction at t={record.timestamp} has source == target "
                    f"({record.source})"
                )
        records.sort(key=lambda record: record.timestamp)

        ids = tuple(range(node_count)) if source_ids is None else tuple(source_ids)
        if len(ids) != node_count:
            raise GraphValidationError(
                f"expected {node_count} source ids, got {len(ids)}"
            )

        return cls(
            node_count=node_count,
            friends=tuple(
                frozenset(friendship_graph.neighbors(node))
                for node in range(node_count)
            ),
            communities=tuple(frozenset(group) for group in groups),
            interactions=tuple(records),
            source_ids=ids,
        )

    @property
    def is_remapped(self) -> bool:
        """Whether the source ids differ from the dense ids."""
        return self.source_ids != tuple(range(self.node_count))

    @cached_property
    def dense_ids(self) -> dict[int, int]:
        """Dense id of every source id."""
        return {source: dense for dense, source in enumerate(self.source_ids)}

    def dense_pair(self, pair: PairKey) -> PairKey:
        """Translate a source-id pair into dense ids.

        :raises ReferentialIntegrityError: If either node is not in the graph.
        """
        for node in pair:
            if node not in self.dense_ids:
                raise ReferentialIntegrityError(
                    f"pair {tuple(pair)} references node {node}, which is not in "
                    "the trace"
                )
        return PairKey(self.dense_ids[pair.trustor], self.dense_ids[pair.trustee])

    def to_dense(self, table: Mapping[PairKey, V]) -> dict[PairKey, V]:
        """Re-key a table read from a pair-keyed file by dense ids."""
        return {self.dense_pair(pair): value for pair, value in table.items()}

    @cached_property
    def directed_history(self) -> dict[PairKey, PairHistory]:
        """Per-direction totals of interactions, failures and messages."""
        totals: dict[PairKey, list[int]] = {}
        for record in self.interactions:
            entry = totals.setdefault(PairKey(record.source, record.target), [0, 0, 0])
            entry[0] += 1
            entry[1] += 0 if record.success else 1
            entry[2] += record.messages
        return {pair: PairHistory(*values) for pair, values in totals.items()}

    def history(self, source: int, target: int) -> PairHistory:
        """Return the totals of records sent from *source* to *target*."""
        return self.directed_history.get(PairKey(source, target), PairHistory(0, 0, 0))

    def with_interactions(
        self, interactions: Iterable[InteractionRecord]
    ) -> SocialGraph:
        """Return a copy of the graph with its interaction log replaced.

        :raises ReferentialIntegrityError: If a record references a missing node.
        :raises GraphValidationError: On a self-interaction.
        """
        return SocialGraph.build(
            node_count=self.node_count,
            friendships=self.to_networkx().edges(),
            memberships=(
                (node, community)
                for node, groups in enumerate(self.communities)
                for community in groups
            ),
            interactions=interactions,
            source_ids=self.source_ids,
        )

    def to_networkx(self) -> nx.Graph:
        """Return the friendship relation as an undirected networkx graph."""
        graph = nx.Graph()
        graph.add_nodes_from(range(self.node_count))
        graph.add_edges_from(
            (i, j) for i, friends in enumerate(self.friends) for j in friends if i < j
        )
        return graph


def _check_node(node: int, node_count: int, what: str) -> None:
    if not 0 <= node < node_count:
        raise ReferentialIntegrityError(
            f"{what} references node {node}, but the graph has {node_count} nodes"
        )


def interacting_pairs(graph: SocialGraph) -> list[PairKey]:
    """Return every ordered pair with at least one record in either direction.

    :param graph: The social graph.
    :return: Pairs sorted ascending by ``(trustor, trustee)``; closed under
        reversal.
    """
    pairs: set[PairKey] = set()
    for source, target in graph.directed_history:
        pairs.add(PairKey(source, target))
        pairs.add(PairKey(target, source))
    return sorted(pairs)


def common_friends(graph: SocialGraph, i: int, j: int) -> frozenset[int]:
    """Return the friends shared by *i* and *j*, excluding *i* and *j*."""
    return (graph.friends[i] & graph.friends[j]) - {i, j}


def source_pairs(
    pairs: Iterable[PairKey], source_ids: Sequence[int] | None
) -> list[PairKey]:
    """Translate dense *pairs* into source ids; unchanged without *source_ids*."""
    if source_ids is None:
        return list(pairs)
    return [PairKey(source_ids[i], source_ids[j]) for i, j in pairs]


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _read_table(path: Path, columns: Sequence[str]) -> tuple[pd.DataFrame, list[int]]:
    """Read a comma-separated trace table into a frame of strings.

    Fields keep their surrounding whitespace; only header names are stripped.

    :return: The frame and, per frame row, its 1-based line number in *path*.
    :raises TraceParseError: On a wrong header or a wrong field count.
    """
    text = path.read_text(encoding="utf-8")
    rows: list[list[str]] = []
    line_numbers: list[int] = []
    header_seen = False
    for number, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        fields = next(csv.reader([raw]))
        if not header_seen:
            if [field.strip() for field in fields] != list(columns):
                raise TraceParseError(
                    path, number, f"expected header '{','.join(columns)}'"
                )
            header_seen = True
            continue
        if len(fields) != len(columns):
            raise TraceParseError(
                path, number, f"expected {len(columns)} fields, got {len(fields)}"
            )
        rows.append(fields)
        line_numbers.append(number)
    if not header_seen:
        raise TraceParseError(path, 1, f"missing header '{','.join(columns)}'")
    return pd.DataFrame(rows, columns=list(columns), dtype=str), line_numbers


def _integer_column(
    frame: pd.DataFrame,
    column: str,
    path: Path,
    line_numbers: list[int],
    minimum: int = 0,
) -> list[int]:
    text = frame[column].str.strip()
    digits = text.str.fullmatch(r"[0-9]+").astype(bool)
    values = pd.to_numeric(text.where(digits), errors="coerce")
    invalid = ~digits | (values < minimum)
    if invalid.any():
        position = int(invalid.to_numpy().argmax())
        raise TraceParseError(
            path,
            line_numbers[position],
            f"{column} must be an integer >= {minimum}, "
            f"got {frame[column].iloc[position]!r}",
        )
    return [int(value) for value in text]


def _dense_ids(
    source: list[int],
    index: dict[int, int],
    path: Path,
    line_numbers: list[int],
    column: str,
) -> list[int]:
    dense = []
    for position, node in enumerate(source):
        if node not in index:
            raise ReferentialIntegrityError(
                f"{path}:{line_numbers[position]}: {column} {node} is not "
                f"declared in {NODES_FILE}"
            )
        dense.append(index[node])
    return dense


def ingest_trace(
    nodes_file: str | Path,
    friends_file: str | Path,
    communities_file: str | Path,
    interactions_file: str | Path,
) -> SocialGraph:
    """Read and validate the four trace CSVs.

    :param nodes_file: Path to ``nodes.csv``.
    :param friends_file: Path to ``friends.csv``.
    :param communities_file: Path to ``communities.csv``.
    :param interactions_file: Path to ``interactions.csv``.
    :return: A validated :class:`SocialGraph`.
    :raises FileNotFoundError: If any file is missing.
    :raises TraceParseError: On a malformed row, with its line number.
    :raises ReferentialIntegrityError: On a dangling node id.
    :raises GraphValidationError: On duplicate nodes or self-loops.
    """
    nodes_path = Path(nodes_file)
    friends_path = Path(friends_file)
    communities_path = Path(communities_file)
    interactions_path = Path(interactions_file)

    frame, lines = _read_table(nodes_path, NODES_COLUMNS)
    declared = _integer_column(frame, "node_id", nodes_path, lines)
    seen: dict[int, int] = {}
    for position, node in enumerate(declared):
        if node in seen:
            raise GraphValidationError(
                f"{nodes_path}:{lines[position]}: duplicate node_id {node} "
                f"(first declared on line {seen[node]})"
            )
        seen[node] = lines[position]
    source_ids = sorted(seen)
    index = {node: dense for dense, node in enumerate(source_ids)}

    frame, lines = _read_table(friends_path, FRIENDS_COLUMNS)
    left = _dense_ids(
        _integer_column(frame, "node_id", friends_path, lines),
        index,
        friends_path,
        lines,
        "node_id",
    )
    right = _dense_ids(
        _integer_column(frame, "friend_id", friends_path, lines),
        index,
        friends_path,
        lines,
        "friend_id",
    )
    for position, (i, j) in enumerate(zip(left, right, strict=True)):
        if i == j:
            raise GraphValidationError(
                f"{friends_path}:{lines[position]}: node {source_ids[i]} cannot "
                "befriend itself"
            )
    friendships = list(zip(left, right, strict=True))

    frame, lines = _read_table(communities_path, COMMUNITIES_COLUMNS)
    members = _dense_ids(
        _integer_column(frame, "node_id", communities_path, lines),
        index,
        communities_path,
        lines,
        "node_id",
    )
    for position, community in enumerate(frame["community_id"]):
        if not community.strip():
            raise TraceParseError(
                communities_path, lines[position], "community_id must not be empty"
            )
    memberships = list(zip(members, frame["community_id"], strict=True))

    frame, lines = _read_table(interactions_path, INTERACTIONS_COLUMNS)
    timestamps = _integer_column(frame, "timestamp", interactions_path, lines)
    sources = _dense_ids(
        _integer_column(frame, "source", interactions_path, lines),
        index,
        interactions_path,
        lines,
        "source",
    )
    targets = _dense_ids(
        _integer_column(frame, "target", interactions_path, lines),
        index,
        interactions_path,
        lines,
        "target",
    )
    messages = _integer_column(frame, "messages", interactions_path, lines, minimum=1)
    outcomes = _integer_column(frame, "success", interactions_path, lines)
    records = []
    for position in range(len(frame)):
        if outcomes[position] not in (0, 1):
            raise TraceParseError(
                interactions_path,
                lines[position],
                f"success must be 0 or 1, got {outcomes[position]}",
            )
        if sources[position] == targets[position]:
            raise GraphValidationError(
                f"{interactions_path}:{lines[position]}: source and target are "
                f"both node {source_ids[sources[position]]}"
            )
        records.append(
            InteractionRecord(
                timestamp=timestamps[position],
                source=sources[position],
                target=targets[position],
                messages=messages[position],
                success=bool(outcomes[position]),
            )
        )

    graph = SocialGraph.build(
        node_count=len(source_ids),
        friendships=friendships,
        memberships=memberships,
        interactions=records,
        source_ids=source_ids,
    )
    logger.info(
        "Ingested trace: %d nodes, %d friendships, %d interactions%s",
        graph.node_count,
        sum(len(friends) for friends in graph.friends) // 2,
        len(graph.interactions),
        " (node ids remapped)" if graph.is_remapped else "",
    )
    return graph


def ingest_trace_dir(directory: str | Path) -> SocialGraph:
    """Ingest the four standard trace files from *directory*."""
    base = Path(directory)
    return ingest_trace(
        base / NODES_FILE,
        base / FRIENDS_FILE,
        base / COMMUNITIES_FILE,
        base / INTERACTIONS_FILE,
    )


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def _write_frame(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def write_trace(graph: SocialGraph, directory: str | Path) -> None:
    """Write *graph* as the four trace CSVs, using its source ids.

    Friendships are written once per undirected edge, memberships and
    interactions in canonical order, so ingesting the output reproduces
    *graph*.

    :param graph: Graph to emit.
    :param directory: Target directory, created if missing.
    """
    base = Path(directory)
    base.mkdir(parents=True, exist_ok=True)
    ids = graph.source_ids

    _write_frame(pd.DataFrame({"node_id": list(ids)}), base / NODES_FILE)
    edges = sorted(
        (min(edge), max(edge)) for edge in graph.to_networkx().edges()
    )
    _write_frame(
        pd.DataFrame(
            [(ids[i], ids[j]) for i, j in edges], columns=list(FRIENDS_COLUMNS)
        ),
        base / FRIENDS_FILE,
    )
    _write_frame(
        pd.DataFrame(
            [
                (ids[node], community)
                for node, groups in enumerate(graph.communities)
                for community in sorted(groups)
            ],
            columns=list(COMMUNITIES_COLUMNS),
        ),
        base / COMMUNITIES_FILE,
    )
    _write_frame(
        pd.DataFrame(
            [
                (
                    record.timestamp,
                    ids[record.source],
                    ids[record.target],
                    record.messages,
                    int(record.success),
                )
                for record in graph.interactions
            ],
            columns=list(INTERACTIONS_COLUMNS),
        ),
        base / INTERACTIONS_FILE,
    )


def write_node_map(graph: SocialGraph, path: str | Path) -> None:
    """Write the dense-to-source id mapping as ``node_id,source_id``."""
    _write_frame(
        pd.DataFrame(
            {"node_id": range(graph.node_count), "source_id": list(graph.source_ids)}
        ),
        Path(path),
    )
