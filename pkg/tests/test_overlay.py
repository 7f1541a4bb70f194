import json
import math

import numpy as np
import pytest

from skipchurn.overlay import (
    ConfigError,
    Direction,
    LookupTable,
    NeighborRef,
    NodeIdentity,
    SearchMessage,
    TopologySnapshot,
    assign_name_ids,
    common_prefix_length,
    cpl_ints,
    generate_topology,
    ideal_search_oracle,
    join_node,
    route_step,
)


def make_topology(pairs):
    """Build a snapshot from (num_id, name_id) pairs; coords are synthetic."""
    n = len(pairs)
    nodes = [
        NodeIdentity(num_id=nid, name_id=name, address=f"n{nid}", coords=(i / n, i / n))
        for i, (nid, name) in enumerate(pairs)
    ]
    capacity = 1
    while capacity < n:
        capacity *= 2
    return TopologySnapshot(capacity=max(2, capacity), nodes=nodes, rng_seed=0)


# A 10-node, 4-level overlay: six name IDs under the 0-prefix, four under 10
# (none under 11), node 43 named 1001.
def sample_topology():
    return make_topology(
        [
            (2, "0010"),
            (5, "0110"),
            (13, "0001"),
            (21, "0111"),
            (33, "0000"),
            (36, "0011"),
            (41, "1010"),
            (43, "1001"),
            (50, "1000"),
            (59, "1011"),
        ]
    )


class TestNameIds:
    def test_two_points_split_on_first_bit(self):
        names = assign_name_ids([(0.1, 0.5), (0.9, 0.5)])
        assert names == ["0", "1"]

    def test_four_corners_share_side_prefix(self):
        corners = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
        names = assign_name_ids(corners)
        assert names[0][0] == names[1][0] == "0"
        assert names[2][0] == names[3][0] == "1"
        assert len(set(names)) == 4

    def test_duplicate_coordinates_break_ties_by_index(self):
        names = assign_name_ids([(0.5, 0.5), (0.5, 0.5)])
        assert names == ["0", "1"]

    def test_lengths_and_uniqueness(self):
        rng = np.random.default_rng(5)
        coords = [tuple(v) for v in rng.random((64, 2)).tolist()]
        names = assign_name_ids(coords)
        assert all(len(n) == 6 for n in names)
        assert len(set(names)) == 64

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ConfigError):
            assign_name_ids([(0.1, 0.1)] * 3)

    def test_locality_prefix_tracks_distance(self):
        topo = generate_topology(1024, seed=11)
        nodes = topo.nodes
        length = topo.name_length
        rng = np.random.default_rng(0)
        close, far = [], []
        for _ in range(40000):
            i, j = rng.integers(0, 1024, size=2).tolist()
            if i == j:
                continue
            a, b = nodes[i], nodes[j]
            d = math.hypot(a.coords[0] - b.coords[0], a.coords[1] - b.coords[1])
            cpl = cpl_ints(a.name_bits, b.name_bits, length)
            if cpl >= 9:
                close.append(d)
            elif cpl == 0:
                far.append(d)
        assert close and far
        assert float(np.mean(close)) < float(np.mean(far))


class TestCommonPrefix:
    def test_level_one_coexistence(self):
        assert common_prefix_length("0010", "0110") == 1

    def test_level_two_coexistence(self):
        assert common_prefix_length("0010", "0001") == 2

    def test_identity(self):
        assert common_prefix_length("0110", "0110") == 4

    def test_int_encoding_agrees(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = "".join(rng.choice(["0", "1"], size=8).tolist())
            b = "".join(rng.choice(["0", "1"], size=8).tolist())
            assert cpl_ints(int(a, 2), int(b, 2), 8) == common_prefix_length(a, b)

    def test_unequal_lengths_rejected(self):
        with pytest.raises(ValueError):
            common_prefix_length("01", "011")


class TestGenerateTopology:
    def test_capacity_two(self):
        topo = generate_topology(2, seed=1)
        assert len(topo.nodes) == 2
        names = sorted(n.name_id for n in topo.nodes)
        assert names[0][0] == "0" and names[1][0] == "1"

    def test_capacity_1024_name_length(self):
        topo = generate_topology(1024, seed=2)
        assert len(topo.nodes) == 1024
        assert all(len(n.name_id) == 10 for n in topo.nodes)
        assert len({n.num_id for n in topo.nodes}) == 1024

    def test_deterministic(self):
        a = generate_topology(64, seed=123)
        b = generate_topology(64, seed=123)
        assert a.to_json() == b.to_json()

    def test_rejects_bad_capacity(self):
        with pytest.raises(ConfigError):
            generate_topology(100, seed=0)

    def test_json_round_trip(self):
        topo = generate_topology(16, seed=3)
        back = TopologySnapshot.from_json(topo.to_json())
        assert back.to_json() == topo.to_json()
        doc = json.loads(topo.to_json())
        assert {"capacity", "nodes", "rngSeed"} <= set(doc)


class TestJoin:
    def test_sole_online_node_has_empty_table(self):
        topo = sample_topology()
        table = join_node(topo, 43, [43])
        assert all(ref is None for pair in table.levels for ref in pair)

    def test_level0_neighbors_are_numeric_adjacents(self):
        topo = sample_topology()
        all_ids = sorted(n.num_id for n in topo.nodes)
        table = join_node(topo, 43, all_ids)
        assert table.neighbor(0, Direction.LEFT).num_id == 41
        assert table.neighbor(0, Direction.RIGHT).num_id == 50

    def test_invariants_hold_for_every_node(self):
        topo = generate_topology(64, seed=9)
        ids = sorted(n.num_id for n in topo.nodes)
        length = topo.name_length
        for ident in topo.nodes:
            table = join_node(topo, ident.num_id, ids)
            for lvl in range(length):
                left = table.neighbor(lvl, Direction.LEFT)
                right = table.neighbor(lvl, Direction.RIGHT)
                if left is not None:
                    assert left.num_id < ident.num_id
                    assert common_prefix_length(left.name_id, ident.name_id) >= lvl
                if right is not None:
                    assert right.num_id > ident.num_id
                    assert common_prefix_length(right.name_id, ident.name_id) >= lvl

    def test_neighbors_are_nearest_online(self):
        topo = generate_topology(32, seed=4)
        ids = sorted(n.num_id for n in topo.nodes)
        online = ids[::2]
        length = topo.name_length
        by_id = {n.num_id: n for n in topo.nodes}
        for joiner_id in online:
            table = join_node(topo, joiner_id, online)
            joiner = by_id[joiner_id]
            for lvl in range(length):
                group = [
                    i
                    for i in online
                    if i != joiner_id
                    and common_prefix_length(by_id[i].name_id, joiner.name_id) >= lvl
                ]
                lefts = [i for i in group if i < joiner_id]
                rights = [i for i in group if i > joiner_id]
                left = table.neighbor(lvl, Direction.LEFT)
                right = table.neighbor(lvl, Direction.RIGHT)
                assert (left.num_id if left else None) == (max(lefts) if lefts else None)
                assert (right.num_id if right else None) == (min(rights) if rights else None)


def _msg(target, level, direction):
    return SearchMessage(target_num_id=target, level=level, direction=direction, initiator="x")


class TestRouteStep:
    def test_exact_hit_terminates(self):
        table = LookupTable.empty(4)
        decision = route_step(43, table, _msg(43, 3, Direction.RIGHT))
        assert decision.action == "terminate"

    def test_forward_within_interval(self):
        table = LookupTable.empty(2)
        table.set_neighbor(1, Direction.RIGHT, NeighborRef("n50", 50, "10"))
        decision = route_step(43, table, _msg(59, 1, Direction.RIGHT))
        assert decision.action == "forward" and decision.neighbor.num_id == 50

    def test_overshoot_descends(self):
        table = LookupTable.empty(2)
        table.set_neighbor(1, Direction.RIGHT, NeighborRef("n50", 50, "10"))
        decision = route_step(43, table, _msg(45, 1, Direction.RIGHT))
        assert decision.action == "descend" and decision.level == 0

    def test_level_zero_without_neighbor_terminates(self):
        table = LookupTable.empty(2)
        decision = route_step(43, table, _msg(45, 0, Direction.RIGHT))
        assert decision.action == "terminate"

    def test_never_forwards_across_target(self):
        rng = np.random.default_rng(21)
        topo = generate_topology(64, seed=21)
        ids = sorted(n.num_id for n in topo.nodes)
        for _ in range(300):
            nid = int(rng.choice(ids))
            target = int(rng.choice(ids))
            if nid == target:
                continue
            table = join_node(topo, nid, ids)
            direction = Direction.RIGHT if target > nid else Direction.LEFT
            lvl = int(rng.integers(0, topo.name_length))
            decision = route_step(nid, table, _msg(target, lvl, direction))
            if decision.action == "forward":
                got = decision.neighbor.num_id
                if direction is Direction.RIGHT:
                    assert nid < got <= target
                else:
                    assert target <= got < nid


class TestOracle:
    def test_exact(self):
        assert ideal_search_oracle([2, 13, 41], 41) == 41

    def test_predecessor(self):
        assert ideal_search_oracle([2, 13, 41], 40) == 13

    def test_below_minimum_returns_smallest(self):
        assert ideal_search_oracle([13, 41], 2) == 13

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no online nodes"):
            ideal_search_oracle([], 5)
