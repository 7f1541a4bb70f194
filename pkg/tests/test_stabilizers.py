import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st_

from skipchurn.overlay import (
    Direction,
    LookupTable,
    NeighborRef,
    NodeIdentity,
    PiggybackEntry,
    SearchMessage,
    common_prefix_length,
    generate_topology,
)
from skipchurn.stabilizers import (
    BackupEntry,
    BackupTable,
    DksPointers,
    KademliaBuckets,
    NoStabilizer,
    build_prefix_groups,
    cand_check,
    kademlia_capacity,
    level_groups_for,
    make_stabilizer,
)

OWNER = NodeIdentity(num_id=100, name_id="1000", address="n100", coords=(0.5, 0.5))
HEIGHT = 4


def entry(num_id, name_id, sop=0.5):
    return PiggybackEntry(address=f"n{num_id}", num_id=num_id, name_id=name_id, sop=sop)


def msg(target, level=0, direction=Direction.RIGHT, visited=()):
    m = SearchMessage(target_num_id=target, level=level, direction=direction, initiator="i")
    for v in visited:
        m.add_piggyback(entry(v, "0000"))
    return m


def empty_lookup():
    return LookupTable.empty(HEIGHT)


def always_online(_):
    return True


def online_set(ids):
    ids = set(ids)
    return lambda nid: nid in ids


class TestCandCheck:
    def test_right_overshoot(self):
        assert not cand_check(50, 40, Direction.RIGHT, msg(40))

    def test_visited_is_rejected(self):
        assert not cand_check(30, 40, Direction.RIGHT, msg(40, visited=[30]))

    def test_left_in_range(self):
        assert cand_check(30, 20, Direction.LEFT, msg(20, direction=Direction.LEFT))

    def test_exact_target_allowed(self):
        assert cand_check(40, 40, Direction.RIGHT, msg(40))


class TestBackupUpdate:
    def test_scoring_substitution(self):
        # sop 0.8, shared prefix 3, numerical distance 6
        table = BackupTable(OWNER, HEIGHT, max_size=8)
        e = BackupEntry("n106", 106, "1001", 0.8)
        assert table._owner_score(e) == pytest.approx(0.8 * 3 / 6)

    def test_lookup_neighbor_not_duplicated(self):
        table = BackupTable(OWNER, HEIGHT, max_size=8)
        lookup = empty_lookup()
        lookup.set_neighbor(0, Direction.RIGHT, NeighborRef("n106", 106, "0001"))
        table.update(lookup, [entry(106, "0001")])
        assert len(table) == 0

    def test_self_not_inserted(self):
        table = BackupTable(OWNER, HEIGHT, max_size=8)
        table.update(empty_lookup(), [entry(100, "1000")])
        assert len(table) == 0

    def test_placement_by_prefix_level_and_direction(self):
        table = BackupTable(OWNER, HEIGHT, max_size=8)
        table.update(empty_lookup(), [entry(106, "1011"), entry(90, "0111")])
        assert 106 in table.entry_set(2, Direction.RIGHT)
        assert 90 in table.entry_set(0, Direction.LEFT)

    def test_prefix_level_capped_at_top(self):
        table = BackupTable(OWNER, HEIGHT, max_size=8)
        table.update(empty_lookup(), [entry(106, "1000")])
        assert 106 in table.entry_set(HEIGHT - 1, Direction.RIGHT)

    def test_newest_version_overwrites(self):
        table = BackupTable(OWNER, HEIGHT, max_size=8)
        table.update(empty_lookup(), [entry(106, "1011", sop=0.2)])
        table.update(empty_lookup(), [entry(106, "1011", sop=0.9)])
        assert len(table) == 1
        assert table.entry_set(2, Direction.RIGHT)[106].sop == 0.9

    def test_full_table_evicts_minimum_score(self):
        table = BackupTable(OWNER, HEIGHT, max_size=2)
        lookup = empty_lookup()
        table.update(lookup, [entry(106, "1011", sop=0.9), entry(90, "0111", sop=0.9)])
        # prefix-0 entry scores zero and is dropped first
        table.update(lookup, [entry(110, "1001", sop=0.9)])
        assert len(table) == 2
        assert 90 not in table._locations
        assert {106, 110} <= set(table._locations)

    def test_zero_capacity_accepts_nothing(self):
        table = BackupTable(OWNER, HEIGHT, max_size=0)
        table.update(empty_lookup(), [entry(106, "1011")])
        assert len(table) == 0

    def test_eviction_matches_full_sort_oracle(self):
        rng = np.random.default_rng(8)
        for trial in range(30):
            size = int(rng.integers(2, 50))
            table = BackupTable(OWNER, HEIGHT, max_size=size)
            lookup = empty_lookup()
            used = {OWNER.num_id}
            items = []
            while len(items) < size:
                nid = int(rng.integers(1, 1000))
                if nid in used:
                    continue
                used.add(nid)
                name = "".join(rng.choice(["0", "1"], size=4).tolist())
                items.append(entry(nid, name, sop=float(rng.random())))
            table.update(lookup, items)
            assert len(table) == size
            # oracle: worst = min score, ties to the farther then larger name
            def rank(e):
                cpl = common_prefix_length(OWNER.name_id, e.name_id)
                score = e.sop * cpl / abs(e.num_id - OWNER.num_id)
                inv = "".join("1" if c == "0" else "0" for c in e.name_id)
                return (score, -abs(e.num_id - OWNER.num_id), inv)
            expected_evict = min(table.entries(), key=rank).num_id
            newcomer = entry(1001, "1100", sop=0.5)
            table.update(lookup, [newcomer])
            assert len(table) == size
            assert expected_evict not in table._locations
            assert 1001 in table._locations

    @given(st_.lists(st_.tuples(st_.integers(0, 5000), st_.floats(0, 1)), min_size=1, max_size=400))
    @settings(max_examples=40, deadline=None)
    def test_size_never_exceeds_bound(self, items):
        table = BackupTable(OWNER, HEIGHT, max_size=13)
        lookup = empty_lookup()
        rng = np.random.default_rng(1)
        batch = []
        for nid, sop in items:
            if nid == OWNER.num_id:
                continue
            name = format(nid % 16, "04b")
            batch.append(entry(nid, name, sop=sop))
        for i in range(0, len(batch), 7):
            table.update(lookup, batch[i : i + 7])
            assert len(table) <= 13


class TestBackupResolve:
    def make_table(self, items, max_size=20):
        table = BackupTable(OWNER, HEIGHT, max_size=max_size)
        table.update(empty_lookup(), items)
        return table

    def test_exact_target_returned_with_single_contact(self):
        table = self.make_table([entry(140, "1011"), entry(120, "1001")])
        got, trace = table.resolve(140, 1, Direction.RIGHT, msg(140, 1), always_online)
        assert got.num_id == 140
        assert [t.num_id for t in trace] == [140]

    def test_offline_exact_target_removed_then_fallback(self):
        table = self.make_table([entry(140, "1011"), entry(120, "1011")])
        got, trace = table.resolve(140, 1, Direction.RIGHT, msg(140, 1), online_set({120}))
        assert got.num_id == 120
        assert [t.num_id for t in trace] == [140, 120]
        assert 140 not in table._locations

    def test_empty_set_returns_none(self):
        table = self.make_table([])
        got, trace = table.resolve(140, 1, Direction.RIGHT, msg(140, 1), always_online)
        assert got is None and trace == []

    def test_contacts_follow_score_order_and_purge(self):
        # three candidates; the best is offline and must be dropped from the
        # table before the runner-up is contacted
        items = [
            entry(149, "1001", sop=0.9),
            entry(120, "1001", sop=0.4),
            entry(130, "1001", sop=0.1),
        ]
        table = self.make_table(items)
        got, trace = table.resolve(150, 1, Direction.RIGHT, msg(150, 1), online_set({120, 130}))
        assert [t.num_id for t in trace][0] == 149
        assert trace[0].online is False
        assert got.num_id == 120
        assert 149 not in table._locations

    def test_contact_order_non_increasing_in_score(self):
        rng = np.random.default_rng(4)
        items = []
        used = {OWNER.num_id}
        for _ in range(30):
            nid = int(rng.integers(101, 400))
            if nid in used:
                continue
            used.add(nid)
            name = "".join(rng.choice(["0", "1"], size=4).tolist())
            items.append(entry(nid, name, sop=float(rng.random())))
        table = self.make_table(items, max_size=40)
        target = 400
        got, trace = table.resolve(target, 0, Direction.RIGHT, msg(target), lambda _: False)
        assert got is None
        def rscore(nid):
            e = next(x for x in items if x.num_id == nid)
            cpl = common_prefix_length(OWNER.name_id, e.name_id)
            return e.sop * cpl / abs(e.num_id - target)
        scores = [rscore(t.num_id) for t in trace]
        assert scores == sorted(scores, reverse=True)

    def test_resolution_uses_levels_at_and_above(self):
        # prefix-3 entry rescues a level-0 failure; prefix-0 entry cannot
        # rescue a level-1 failure
        table = self.make_table([entry(140, "1001"), entry(90, "0001")])
        got, _ = table.resolve(150, 0, Direction.RIGHT, msg(150), always_online)
        assert got.num_id == 140
        got_left, _ = table.resolve(80, 1, Direction.LEFT, msg(80, 1, Direction.LEFT), always_online)
        assert got_left is None

    def test_visited_candidates_skipped(self):
        table = self.make_table([entry(140, "1011")])
        got, trace = table.resolve(150, 1, Direction.RIGHT, msg(150, 1, visited=[140]), always_online)
        assert got is None and trace == []


class TestKademlia:
    def test_capacity_distribution_example(self):
        caps = kademlia_capacity(50, 4)
        assert [sum(pair) for pair in caps] == [14, 12, 12, 12]

    def test_capacity_zero(self):
        assert kademlia_capacity(0, 4) == [[0, 0]] * 4

    def test_capacity_exact_division(self):
        caps = kademlia_capacity(8, 4)
        assert caps == [[1, 1]] * 4

    def test_odd_shares_favor_left(self):
        caps = kademlia_capacity(7, 4)
        assert [sum(pair) for pair in caps] == [3, 2, 1, 1]
        assert all(left >= right for left, right in caps)
        assert sum(sum(p) for p in caps) == 7

    def test_insert_at_head_evict_tail(self):
        owner = NodeIdentity(num_id=100, name_id="1000", address="n100", coords=(0, 0))
        buckets = KademliaBuckets(owner, 4, max_size=8)  # cap 1 per direction
        lookup = LookupTable.empty(4)
        buckets.update(lookup, [entry(106, "1011")])
        buckets.update(lookup, [entry(108, "1010")])
        bucket = buckets.bucket(2, Direction.RIGHT)
        assert [e.num_id for e in bucket] == [108]

    def test_reinsert_moves_to_head(self):
        owner = NodeIdentity(num_id=100, name_id="1000", address="n100", coords=(0, 0))
        buckets = KademliaBuckets(owner, 4, max_size=16)  # cap 2 per direction
        lookup = LookupTable.empty(4)
        buckets.update(lookup, [entry(106, "1011"), entry(108, "1010")])
        buckets.update(lookup, [entry(106, "1011")])
        bucket = buckets.bucket(2, Direction.RIGHT)
        assert [e.num_id for e in bucket] == [106, 108]
        assert len(bucket) == 2

    def test_resolve_scans_recency_order(self):
        owner = NodeIdentity(num_id=100, name_id="1000", address="n100", coords=(0, 0))
        buckets = KademliaBuckets(owner, 4, max_size=16)
        lookup = LookupTable.empty(4)
        buckets.update(lookup, [entry(106, "1011"), entry(108, "1011")])
        got, trace = buckets.resolve(150, 2, Direction.RIGHT, msg(150, 2), online_set({106}))
        assert [t.num_id for t in trace] == [108, 106]
        assert got.num_id == 106
        assert all(e.num_id != 108 for e in buckets.bucket(2, Direction.RIGHT))


def dks_fixture(max_size=8):
    topo = generate_topology(16, seed=13)
    groups = build_prefix_groups(topo)
    ids = sorted(n.num_id for n in topo.nodes)
    owner = topo.node_by_num_id(ids[5])
    dks = DksPointers(owner, topo.name_length, max_size=max_size)
    dks.initialize(level_groups_for(groups, owner))
    return topo, ids, owner, dks


class TestDks:
    def test_init_lists_are_consecutive(self):
        topo, ids, owner, dks = dks_fixture()
        pos = ids.index(owner.num_id)
        right = [n.num_id for n in dks.lists[0][1]]
        cap = dks.capacities[0][1]
        assert right == ids[pos + 1 : pos + 1 + cap]
        left = [n.num_id for n in dks.lists[0][0]]
        cap_l = dks.capacities[0][0]
        assert left == list(reversed(ids[max(0, pos - cap_l) : pos]))

    def test_all_online_head_returned(self):
        topo, ids, owner, dks = dks_fixture()
        target = ids[-1]
        got, trace = dks.resolve(target, 0, Direction.RIGHT, msg(target), always_online)
        assert got.num_id == dks.lists[0][1][0].num_id if dks.lists[0][1] else got is None
        assert len(trace) == 1

    def test_offline_head_shifts_window(self):
        topo, ids, owner, dks = dks_fixture(max_size=16)
        pos = ids.index(owner.num_id)
        first, second = ids[pos + 1], ids[pos + 2]
        target = ids[-1]
        ping = online_set(set(ids) - {first})
        before = [n.num_id for n in dks.lists[0][1]]
        got, trace = dks.resolve(target, 0, Direction.RIGHT, msg(target), ping)
        assert [t.num_id for t in trace] == [first, second]
        assert got.num_id == second
        after = [n.num_id for n in dks.lists[0][1]]
        assert first not in after
        assert len(after) == len(before)  # tail was extended

    def test_single_member_list_dies_on_failure(self):
        # with head == tail there is nobody left to ask for an extension
        topo, ids, owner, dks = dks_fixture(max_size=8)  # one pointer per direction
        target = ids[-1]
        before = len(dks.lists[0][1])
        assert before == 1
        got, trace = dks.resolve(target, 0, Direction.RIGHT, msg(target), lambda _: False)
        assert got is None and len(trace) == 1
        assert len(dks.lists[0][1]) == 0

    def test_concurrent_failures_starve_the_list(self):
        topo, ids, owner, dks = dks_fixture()
        target = ids[-1]
        got, trace = dks.resolve(target, 0, Direction.RIGHT, msg(target), lambda _: False)
        assert got is None
        assert dks.total_entries() < dks.max_size  # lists shrank, not refilled

    def test_overshoot_returns_none_without_contact(self):
        topo, ids, owner, dks = dks_fixture()
        pos = ids.index(owner.num_id)
        target = owner.num_id + 1  # below the first right successor
        if ids[pos + 1] <= target:
            target = owner.num_id
        got, trace = dks.resolve(target, 0, Direction.RIGHT, msg(max(target, owner.num_id + 1)), always_online)
        if dks.lists[0][1] and dks.lists[0][1][0].num_id > target:
            assert got is None and trace == []

    def test_rejoin_restores_windows(self):
        topo, ids, owner, dks = dks_fixture()
        target = ids[-1]
        dks.resolve(target, 0, Direction.RIGHT, msg(target), lambda _: False)
        shrunk = dks.total_entries()
        dks.reset()
        assert dks.total_entries() > shrunk


class TestLifecycle:
    def test_reset_clears_backup(self):
        table = BackupTable(OWNER, HEIGHT, max_size=8)
        table.update(empty_lookup(), [entry(106, "1011"), entry(90, "0111")])
        table.reset()
        assert len(table) == 0
        assert table.total_entries() == 0

    def test_none_stabilizer_resolves_nothing(self):
        stab = NoStabilizer(OWNER, HEIGHT, 40)
        stab.update(empty_lookup(), [entry(106, "1011")])
        got, trace = stab.resolve(150, 0, Direction.RIGHT, msg(150), always_online)
        assert got is None and trace == [] and stab.total_entries() == 0

    def test_factory(self):
        assert isinstance(make_stabilizer("interlaced", OWNER, 4, 8), BackupTable)
        assert isinstance(make_stabilizer("kademlia", OWNER, 4, 8), KademliaBuckets)
        assert isinstance(make_stabilizer("dks", OWNER, 4, 8), DksPointers)
        assert isinstance(make_stabilizer("none", OWNER, 4, 8), NoStabilizer)
        with pytest.raises(ValueError):
            make_stabilizer("chord", OWNER, 4, 8)

    def test_zero_budget_resolves_nothing(self):
        for kind in ("interlaced", "kademlia"):
            stab = make_stabilizer(kind, OWNER, HEIGHT, 0)
            stab.update(empty_lookup(), [entry(106, "1011"), entry(90, "0111")])
            got, trace = stab.resolve(150, 0, Direction.RIGHT, msg(150), always_online)
            assert got is None and trace == []
