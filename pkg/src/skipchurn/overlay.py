"""Skip Graph overlay: identities, topology generation, lookup tables, routing.

A topology is a fixed registry of nodes (the system capacity), each carrying a
numerical ID (the sort key of the bottom list), a name ID (a bit string whose
prefixes govern membership in the higher-level lists), an address, and a pair
of synthetic coordinates used by the latency model.  Name IDs are assigned by
recursive median bisection of the coordinates so that spatial proximity shows
up as longer common prefixes.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised for invalid configuration values."""


class Direction(Enum):
    LEFT = "left"
    RIGHT = "right"


NUM_ID_SPACE = 1 << 32


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class NodeIdentity:
    """A registered peer: unique numerical ID, name ID, address, coordinates."""

    num_id: int
    name_id: str
    address: str
    coords: tuple[float, float]

    @property
    def name_bits(self) -> int:
        return int(self.name_id, 2) if self.name_id else 0


class NeighborRef(NamedTuple):
    address: str
    num_id: int
    name_id: str


@dataclass
class LookupTable:
    """Per-level left/right neighbor pointers of one node."""

    levels: list[list[Optional[NeighborRef]]]

    @classmethod
    def empty(cls, height: int) -> "LookupTable":
        return cls(levels=[[None, None] for _ in range(height)])

    @property
    def height(self) -> int:
        return len(self.levels)

    def neighbor(self, level: int, direction: Direction) -> Optional[NeighborRef]:
        slot = 0 if direction is Direction.LEFT else 1
        return self.levels[level][slot]

    def set_neighbor(self, level: int, direction: Direction, ref: Optional[NeighborRef]) -> None:
        slot = 0 if direction is Direction.LEFT else 1
        self.levels[level][slot] = ref

    def neighbor_num_ids(self) -> set[int]:
        return {ref.num_id for pair in self.levels for ref in pair if ref is not None}


@dataclass(frozen=True)
class PiggybackEntry:
    address: str
    num_id: int
    name_id: str
    sop: float


@dataclass
class SearchMessage:
    """A search for a numerical ID in flight.

    ``piggyback`` maps num_id to the newest entry seen for that node; the
    insertion order doubles as the visit order of the routing path.  ``level``
    only ever decreases while the message is routed.
    """

    target_num_id: int
    level: int
    direction: Direction
    initiator: str
    piggyback: dict[int, PiggybackEntry] = field(default_factory=dict)
    accumulated_latency_ms: float = 0.0
    hops: int = 0

    def add_piggyback(self, entry: PiggybackEntry) -> None:
        self.piggyback[entry.num_id] = entry

    def has_visited(self, num_id: int) -> bool:
        return num_id in self.piggyback


@dataclass(frozen=True)
class RouteDecision:
    """Outcome of one routing step: ``forward``, ``descend`` or ``terminate``."""

    action: str
    neighbor: Optional[NeighborRef] = None
    level: int = 0


@dataclass
class TopologySnapshot:
    """An immutable node registry, reproducible from (capacity, seed)."""

    capacity: int
    nodes: list[NodeIdentity]
    rng_seed: int

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.capacity):
            raise ConfigError(f"capacity must be a power of two, got {self.capacity}")

    @property
    def name_length(self) -> int:
        return max(1, self.capacity.bit_length() - 1)

    def node_by_num_id(self, num_id: int) -> NodeIdentity:
        return self._index()[num_id]

    def _index(self) -> dict[int, NodeIdentity]:
        if not hasattr(self, "_by_num_id"):
            self._by_num_id = {n.num_id: n for n in self.nodes}
        return self._by_num_id

    def to_json(self) -> str:
        doc = {
            "capacity": self.capacity,
            "rngSeed": self.rng_seed,
            "nodes": [
                {"numId": n.num_id, "nameId": n.name_id, "coords": list(n.coords)}
                for n in self.nodes
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TopologySnapshot":
        doc = json.loads(text)
        nodes = [
            NodeIdentity(
                num_id=item["numId"],
                name_id=item["nameId"],
                address=_address_for(item["numId"]),
                coords=(item["coords"][0], item["coords"][1]),
            )
            for item in doc["nodes"]
        ]
        return cls(capacity=doc["capacity"], nodes=nodes, rng_seed=doc["rngSeed"])


def _address_for(num_id: int) -> str:
    return f"n{num_id}"


def common_prefix_length(a: str, b: str) -> int:
    """Number of leading bits shared by two equal-length name IDs."""
    if len(a) != len(b):
        raise ValueError("name IDs must have equal length")
    n = 0
    for ca, cb in zip(a, b):
        if ca != cb:
            break
        n += 1
    return n


def cpl_ints(a_bits: int, b_bits: int, length: int) -> int:
    """common_prefix_length on integer-encoded name IDs (hot path)."""
    x = a_bits ^ b_bits
    if x == 0:
        return length
    return length - x.bit_length()


def assign_name_ids(coords: Sequence[tuple[float, float]]) -> list[str]:
    """Assign name IDs by alternating-axis median bisection of the unit square.

    Each split appends one bit (0 for the lower half, 1 for the upper half), so
    points that stay together through many splits share long prefixes.  Ties on
    a coordinate are broken by input index, which keeps the result
    deterministic for duplicate points.
    """
    count = len(coords)
    if not _is_power_of_two(count):
        raise ConfigError(f"coordinate count must be a power of two, got {count}")
    for x, y in coords:
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ConfigError("coordinates must lie in the unit square")

    bits = max(1, count.bit_length() - 1)
    names = [""] * count
    if count == 1:
        return ["0" * bits]

    def split(indices: list[int], depth: int, prefix: str) -> None:
        if len(indices) == 1:
            names[indices[0]] = prefix
            return
        axis = depth % 2
        ordered = sorted(indices, key=lambda i: (coords[i][axis], i))
        half = len(ordered) // 2
        split(ordered[:half], depth + 1, prefix + "0")
        split(ordered[half:], depth + 1, prefix + "1")

    split(list(range(count)), 0, "")
    return names


def generate_topology(capacity: int, seed: int) -> TopologySnapshot:
    """Create ``capacity`` nodes with unique random numerical IDs.

    Numerical IDs are drawn uniformly from [0, 2**32) without replacement,
    coordinates uniformly from the unit square, and name IDs from
    :func:`assign_name_ids`.  Deterministic for a fixed seed.
    """
    if not _is_power_of_two(capacity) or capacity < 2:
        raise ConfigError(f"capacity must be a power of two >= 2, got {capacity}")
    rng = np.random.default_rng(seed)
    num_ids: list[int] = []
    seen: set[int] = set()
    while len(num_ids) < capacity:
        draw = rng.integers(0, NUM_ID_SPACE, size=capacity - len(num_ids))
        for v in draw.tolist():
            if v not in seen:
                seen.add(v)
                num_ids.append(v)
    xy = rng.random(size=(capacity, 2))
    coords = [(float(x), float(y)) for x, y in xy]
    names = assign_name_ids(coords)
    nodes = [
        NodeIdentity(num_id=n, name_id=name, address=_address_for(n), coords=c)
        for n, name, c in zip(num_ids, names, coords)
    ]
    return TopologySnapshot(capacity=capacity, nodes=nodes, rng_seed=seed)


def join_node(
    topology: TopologySnapshot,
    num_id: int,
    online_num_ids: Iterable[int],
) -> LookupTable:
    """Build the lookup table a correct join would produce.

    For every level the left and right neighbors are the nearest online nodes
    by numerical ID among those sharing at least that many name-ID prefix bits
    with the joiner.  The joiner itself is ignored; an empty online set yields
    an empty table.
    """
    length = topology.name_length
    joiner = topology.node_by_num_id(num_id)
    joiner_bits = joiner.name_bits
    table = LookupTable.empty(length)
    best_left: list[Optional[NodeIdentity]] = [None] * length
    best_right: list[Optional[NodeIdentity]] = [None] * length
    index = topology._index()
    for other_id in online_num_ids:
        if other_id == num_id:
            continue
        other = index[other_id]
        cpl = cpl_ints(joiner_bits, other.name_bits, length)
        top = min(cpl, length - 1)
        if other_id < num_id:
            for lvl in range(top + 1):
                cur = best_left[lvl]
                if cur is None or other_id > cur.num_id:
                    best_left[lvl] = other
        else:
            for lvl in range(top + 1):
                cur = best_right[lvl]
                if cur is None or other_id < cur.num_id:
                    best_right[lvl] = other
    for lvl in range(length):
        if best_left[lvl] is not None:
            n = best_left[lvl]
            table.set_neighbor(lvl, Direction.LEFT, NeighborRef(n.address, n.num_id, n.name_id))
        if best_right[lvl] is not None:
            n = best_right[lvl]
            table.set_neighbor(lvl, Direction.RIGHT, NeighborRef(n.address, n.num_id, n.name_id))
    return table


def route_step(node_num_id: int, lookup: LookupTable, msg: SearchMessage) -> RouteDecision:
    """Decide the next move for a search message held by ``node_num_id``.

    Forwards to the level neighbor in the search direction when it lies in
    (node, target] (right) or [target, node) (left); otherwise descends one
    level, and terminates at the current node once level 0 offers no eligible
    neighbor.  Holding the exact target terminates immediately.
    """
    target = msg.target_num_id
    if node_num_id == target:
        return RouteDecision("terminate")
    if msg.direction is Direction.RIGHT:
        assert target > node_num_id, "direction inconsistent with target"
    else:
        assert target < node_num_id, "direction inconsistent with target"
    nb = lookup.neighbor(msg.level, msg.direction)
    if nb is not None:
        if msg.direction is Direction.RIGHT:
            eligible = node_num_id < nb.num_id <= target
        else:
            eligible = target <= nb.num_id < node_num_id
        if eligible:
            return RouteDecision("forward", neighbor=nb, level=msg.level)
    if msg.level > 0:
        return RouteDecision("descend", level=msg.level - 1)
    return RouteDecision("terminate")


def ideal_search_oracle(online_num_ids: Sequence[int], target: int) -> int:
    """Ground truth for a search: greatest ID <= target, else the smallest ID.

    ``online_num_ids`` must be sorted ascending and non-empty.
    """
    if not online_num_ids:
        raise ValueError("no online nodes")
    pos = bisect_left(online_num_ids, target)
    if pos < len(online_num_ids) and online_num_ids[pos] == target:
        return online_num_ids[pos]
    if pos == 0:
        return online_num_ids[0]
    return online_num_ids[pos - 1]
