"""Timeout-failure recovery strategies.

Every stabilizer exposes the same two event handlers.  ``on_message`` runs on
each search message a node handles and feeds the piggybacked availability
entries into the node's local store.  ``resolve`` runs after a timeout failure
on the lookup neighbor at a given level and direction; it pings candidates
from the store until one answers, returning that candidate together with the
ordered contact trace (candidate, was_online) used for latency accounting.  A
``None`` candidate tells the caller to descend a level, or to end the whole
search when already at level 0.

Strategies:

* scored backup table (``interlaced``): bounded set store; eviction drops the
  globally lowest-scored entry, resolution contacts candidates by score.
* recency buckets (``kademlia``): per-level fixed-capacity lists, newest at
  the head, oldest evicted, contacted head first.
* successor pointers (``dks``): per-level lists of the immediately following
  topology nodes, refilled from the identifier space as heads fail.
* ``none``: keeps nothing, resolves nothing.
"""

from __future__ import annotations

from bisect import bisect_left
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .overlay import (
    Direction,
    LookupTable,
    NodeIdentity,
    PiggybackEntry,
    SearchMessage,
    TopologySnapshot,
    common_prefix_length,
)

STABILIZER_KINDS = ("interlaced", "kademlia", "dks", "none")

PingFn = Callable[[int], bool]


@dataclass
class BackupEntry:
    address: str
    num_id: int
    name_id: str
    sop: float
    score: float = 0.0


@dataclass(frozen=True)
class ContactAttempt:
    num_id: int
    online: bool


ResolveResult = tuple[Optional[BackupEntry], list[ContactAttempt]]


def cand_check(entry_num_id: int, target: int, direction: Direction, msg: SearchMessage) -> bool:
    """A routing candidate must lie on the search side of the target and must
    not already have handled this message."""
    if direction is Direction.RIGHT and entry_num_id > target:
        return False
    if direction is Direction.LEFT and entry_num_id < target:
        return False
    if msg.has_visited(entry_num_id):
        return False
    return True


def _entry_level(owner: NodeIdentity, name_id: str, height: int) -> int:
    return min(common_prefix_length(owner.name_id, name_id), height - 1)


def _score(sop: float, cpl: int, distance: int) -> float:
    assert distance != 0, "scoring distance must be nonzero"
    return (sop * cpl) / distance


class BackupTable:
    """Score-managed backup neighbors, bounded by ``max_size`` across all sets.

    Entries live in the set addressed by the common-prefix level with the
    owner and the numerical-ID direction.  A full table drops the entry whose
    owner-relative score is globally minimal before accepting a new one; ties
    evict the farther entry, then the lexicographically larger name ID.
    """

    def __init__(self, owner: NodeIdentity, height: int, max_size: int):
        if max_size < 0:
            raise ValueError("backup size must be >= 0")
        self.owner = owner
        self.height = height
        self.max_size = max_size
        self.sets: list[list[dict[int, BackupEntry]]] = [
            [{}, {}] for _ in range(height)
        ]
        self._locations: dict[int, tuple[int, int]] = {}

    def __len__(self) -> int:
        return len(self._locations)

    def entries(self) -> Iterable[BackupEntry]:
        for pair in self.sets:
            for bucket in pair:
                yield from bucket.values()

    def entry_set(self, level: int, direction: Direction) -> dict[int, BackupEntry]:
        return self.sets[level][0 if direction is Direction.LEFT else 1]

    def _slot_for(self, entry_num_id: int) -> int:
        return 1 if entry_num_id > self.owner.num_id else 0

    def _remove(self, num_id: int) -> None:
        loc = self._locations.pop(num_id, None)
        if loc is not None:
            self.sets[loc[0]][loc[1]].pop(num_id, None)

    def _owner_score(self, e: BackupEntry) -> float:
        cpl = common_prefix_length(self.owner.name_id, e.name_id)
        return _score(e.sop, cpl, abs(e.num_id - self.owner.num_id))

    def update(self, lookup: LookupTable, piggyback: Sequence[PiggybackEntry]) -> None:
        """Insert piggybacked elements, skipping lookup neighbors and self."""
        if self.max_size == 0:
            return
        owner_id = self.owner.num_id
        lookup_ids = lookup.neighbor_num_ids()
        for item in piggyback:
            if item.num_id == owner_id or item.num_id in lookup_ids:
                continue
            existing = self._locations.get(item.num_id)
            if existing is not None:
                bucket = self.sets[existing[0]][existing[1]]
                old = bucket[item.num_id]
                old.sop = item.sop
                old.address = item.address
                continue
            if len(self._locations) >= self.max_size:
                self._evict_minimum()
            entry = BackupEntry(item.address, item.num_id, item.name_id, item.sop)
            level = _entry_level(self.owner, item.name_id, self.height)
            slot = self._slot_for(item.num_id)
            self.sets[level][slot][item.num_id] = entry
            self._locations[item.num_id] = (level, slot)

    def _evict_minimum(self) -> BackupEntry:
        worst = None
        worst_key = None
        owner_id = self.owner.num_id
        for pair in self.sets:
            for bucket in pair:
                for e in bucket.values():
                    e.score = self._owner_score(e)
                    key = (e.score, -abs(e.num_id - owner_id), _inverted_name(e.name_id))
                    if worst_key is None or key < worst_key:
                        worst_key = key
                        worst = e
        assert worst is not None, "eviction requested on an empty table"
        self._remove(worst.num_id)
        return worst

    def reset(self) -> None:
        """Drop all entries; a re-arriving node starts with an empty table."""
        for pair in self.sets:
            pair[0].clear()
            pair[1].clear()
        self._locations.clear()

    def resolve(
        self,
        target: int,
        level: int,
        direction: Direction,
        msg: SearchMessage,
        ping: PingFn,
    ) -> ResolveResult:
        """Pick an online routing candidate eligible at (level, direction).

        Mirroring lookup-table structure, an entry is a member of every level
        up to its stored common-prefix level, so resolution at ``level`` draws
        on the direction's sets from ``level`` upward.  An entry holding the
        exact target is contacted first.  Remaining eligible entries are
        contacted best-score first; offline contacts are purged from the
        table.  Returns (candidate, trace); the candidate is None when no
        online eligible entry exists.
        """
        slot = 0 if direction is Direction.LEFT else 1
        buckets = [self.sets[lvl][slot] for lvl in range(level, self.height)]
        trace: list[ContactAttempt] = []
        for bucket in buckets:
            exact = bucket.get(target)
            if exact is None:
                continue
            online = ping(exact.num_id)
            trace.append(ContactAttempt(exact.num_id, online))
            if online:
                return exact, trace
            self._remove(exact.num_id)
            break
        owner_name = self.owner.name_id
        candidates = []
        for bucket in buckets:
            for e in bucket.values():
                if not cand_check(e.num_id, target, direction, msg):
                    continue
                cpl = common_prefix_length(owner_name, e.name_id)
                e.score = _score(e.sop, cpl, abs(e.num_id - target))
                candidates.append(e)
        candidates.sort(
            key=lambda e: (-e.score, abs(e.num_id - target), e.name_id)
        )
        for e in candidates:
            online = ping(e.num_id)
            trace.append(ContactAttempt(e.num_id, online))
            if online:
                return e, trace
            self._remove(e.num_id)
        return None, trace

    def total_entries(self) -> int:
        return len(self._locations)


def _inverted_name(name_id: str) -> str:
    # Lexicographically smaller names win ties, so invert for min-selection.
    return "".join("1" if c == "0" else "0" for c in name_id)


def kademlia_capacity(b: int, levels: int) -> list[list[int]]:
    """Distribute a backup budget over levels and directions.

    Each level receives floor(b / levels), split between (left, right) with an
    odd slot going left.  The remainder is handed out two at a time (one per
    direction) starting at level 0; an odd final slot also goes left.
    """
    if b < 0:
        raise ValueError("backup size must be >= 0")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    base = b // levels
    shares = [base] * levels
    remainder = b % levels
    lvl = 0
    while remainder > 0:
        add = min(2, remainder)
        shares[lvl % levels] += add
        remainder -= add
        lvl += 1
    result = []
    for share in shares:
        right = share // 2
        left = share - right
        result.append([left, right])
    return result


class KademliaBuckets:
    """Recency-ordered backup lists with per-bucket capacity."""

    def __init__(self, owner: NodeIdentity, height: int, max_size: int):
        self.owner = owner
        self.height = height
        self.max_size = max_size
        self.capacities = kademlia_capacity(max_size, height)
        self.buckets: list[list[deque[BackupEntry]]] = [
            [deque(), deque()] for _ in range(height)
        ]

    def bucket(self, level: int, direction: Direction) -> deque:
        return self.buckets[level][0 if direction is Direction.LEFT else 1]

    def update(self, lookup: LookupTable, piggyback: Sequence[PiggybackEntry]) -> None:
        owner_id = self.owner.num_id
        lookup_ids = lookup.neighbor_num_ids()
        for item in piggyback:
            if item.num_id == owner_id or item.num_id in lookup_ids:
                continue
            level = _entry_level(self.owner, item.name_id, self.height)
            slot = 1 if item.num_id > owner_id else 0
            cap = self.capacities[level][slot]
            if cap == 0:
                continue
            bucket = self.buckets[level][slot]
            for i, e in enumerate(bucket):
                if e.num_id == item.num_id:
                    del bucket[i]
                    break
            bucket.appendleft(BackupEntry(item.address, item.num_id, item.name_id, item.sop))
            while len(bucket) > cap:
                bucket.pop()

    def reset(self) -> None:
        for pair in self.buckets:
            pair[0].clear()
            pair[1].clear()

    def resolve(
        self,
        target: int,
        level: int,
        direction: Direction,
        msg: SearchMessage,
        ping: PingFn,
    ) -> ResolveResult:
        """Head-to-tail scan of the bucket; first online candidate wins."""
        bucket = self.buckets[level][0 if direction is Direction.LEFT else 1]
        trace: list[ContactAttempt] = []
        exact = next((e for e in bucket if e.num_id == target), None)
        if exact is not None:
            online = ping(exact.num_id)
            trace.append(ContactAttempt(exact.num_id, online))
            if online:
                return exact, trace
            bucket.remove(exact)
        for e in list(bucket):
            if not cand_check(e.num_id, target, direction, msg):
                continue
            online = ping(e.num_id)
            trace.append(ContactAttempt(e.num_id, online))
            if online:
                return e, trace
            bucket.remove(e)
        return None, trace

    def total_entries(self) -> int:
        return sum(len(b) for pair in self.buckets for b in pair)


class DksPointers:
    """Per-level lists of the immediately succeeding topology nodes.

    Lists are (re)filled at join time from the full registry, ignoring online
    status, and carry no availability information.  When a head fails it is
    dropped and the list is extended with the node beyond the current tail in
    the identifier space; the appended node may itself be offline.  Learning
    that next node requires asking the current tail, so no extension happens
    while the tail is offline, which is how runs of concurrent failures starve
    the list.
    """

    def __init__(self, owner: NodeIdentity, height: int, max_size: int):
        self.owner = owner
        self.height = height
        self.max_size = max_size
        self.capacities = kademlia_capacity(max_size, height)
        # per (level, slot): deque of NodeIdentity plus the group frontier index
        self.lists: list[list[deque[NodeIdentity]]] = [[deque(), deque()] for _ in range(height)]
        self._frontier: list[list[int]] = [[0, 0] for _ in range(height)]
        self._groups: list[list[NodeIdentity]] = []

    def initialize(self, level_groups: Optional[Sequence[Sequence[NodeIdentity]]] = None) -> None:
        """Fill every list with the owner's nearest same-prefix-group nodes.

        ``level_groups[level]`` is the numerically sorted list of all registry
        nodes whose name ID shares at least ``level`` prefix bits with the
        owner (the owner included).  Re-joining with no argument reuses the
        groups supplied at the first join.
        """
        if level_groups is not None:
            self._groups = [list(g) for g in level_groups]
        if not self._groups:
            raise ValueError("successor pointers need level groups at the first join")
        for level in range(self.height):
            group = self._groups[level]
            ids = [n.num_id for n in group]
            pos = bisect_left(ids, self.owner.num_id)
            cap_left, cap_right = self.capacities[level]
            left = deque(group[max(0, pos - cap_left) : pos])
            left.reverse()
            right = deque(group[pos + 1 : pos + 1 + cap_right])
            self.lists[level][0] = left
            self.lists[level][1] = right
            self._frontier[level][0] = pos - len(left) - 1
            self._frontier[level][1] = pos + len(right) + 1

    def reset(self) -> None:
        self.initialize()

    def update(self, lookup: LookupTable, piggyback: Sequence[PiggybackEntry]) -> None:
        # Successor pointers ignore piggybacked availability information.
        return

    def resolve(
        self,
        target: int,
        level: int,
        direction: Direction,
        msg: SearchMessage,
        ping: PingFn,
    ) -> ResolveResult:
        slot = 0 if direction is Direction.LEFT else 1
        pointers = self.lists[level][slot]
        group = self._groups[level] if self._groups else []
        trace: list[ContactAttempt] = []
        while pointers:
            head = pointers[0]
            if direction is Direction.RIGHT and head.num_id > target:
                return None, trace
            if direction is Direction.LEFT and head.num_id < target:
                return None, trace
            online = ping(head.num_id)
            trace.append(ContactAttempt(head.num_id, online))
            if online:
                entry = BackupEntry(head.address, head.num_id, head.name_id, 0.0)
                return entry, trace
            tail_online = ping(pointers[-1].num_id) if len(pointers) > 1 else False
            pointers.popleft()
            if tail_online:
                idx = self._frontier[level][slot]
                if 0 <= idx < len(group):
                    pointers.append(group[idx])
                    self._frontier[level][slot] = idx + (1 if slot == 1 else -1)
        return None, trace

    def total_entries(self) -> int:
        return sum(len(lst) for pair in self.lists for lst in pair)


class NoStabilizer:
    """Keeps no state; every resolution fails."""

    def __init__(self, owner: NodeIdentity, height: int, max_size: int):
        self.owner = owner
        self.height = height
        self.max_size = 0

    def update(self, lookup: LookupTable, piggyback: Sequence[PiggybackEntry]) -> None:
        return

    def reset(self) -> None:
        return

    def resolve(self, target, level, direction, msg, ping) -> ResolveResult:
        return None, []

    def total_entries(self) -> int:
        return 0


def make_stabilizer(kind: str, owner: NodeIdentity, height: int, max_size: int):
    if kind == "interlaced":
        return BackupTable(owner, height, max_size)
    if kind == "kademlia":
        return KademliaBuckets(owner, height, max_size)
    if kind == "dks":
        return DksPointers(owner, height, max_size)
    if kind == "none":
        return NoStabilizer(owner, height, max_size)
    raise ValueError(f"unknown stabilizer kind: {kind}")


def build_prefix_groups(topology: TopologySnapshot) -> list[dict[str, list[NodeIdentity]]]:
    """Per-level prefix buckets of the whole registry, numerically sorted.

    ``groups[level][prefix]`` lists every node whose name ID starts with the
    ``level``-bit ``prefix``; shared by all nodes of one topology.
    """
    length = topology.name_length
    ordered = sorted(topology.nodes, key=lambda n: n.num_id)
    groups: list[dict[str, list[NodeIdentity]]] = []
    for level in range(length):
        buckets: dict[str, list[NodeIdentity]] = {}
        for n in ordered:
            buckets.setdefault(n.name_id[:level], []).append(n)
        groups.append(buckets)
    return groups


def level_groups_for(
    prefix_groups: Sequence[dict[str, list[NodeIdentity]]], owner: NodeIdentity
) -> list[list[NodeIdentity]]:
    return [prefix_groups[lvl][owner.name_id[:lvl]] for lvl in range(len(prefix_groups))]
