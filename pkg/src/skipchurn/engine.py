"""Discrete time-slot simulation loop.

Each slot: arrivals come online, rebuild their lookup tables and replay the
status bits they missed while away; a workload of searches routes through the
overlay with latency, timeout and piggyback accounting; nodes online during
the slot feed their predictors; prediction error is sampled for every
registered node; finally expired sessions depart silently.

Topology runs are pure functions of (config, topology index) and may execute
in parallel.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_left, insort
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from .churn import ChurnModel, draw_arrival_count, draw_session_length
from .overlay import (
    ConfigError,
    Direction,
    LookupTable,
    NodeIdentity,
    PiggybackEntry,
    SearchMessage,
    TopologySnapshot,
    generate_topology,
    join_node,
    route_step,
)
from .predictors import (
    DEFAULT_MAX_STATE_SIZE,
    PREDICTOR_KINDS,
    SlidingWindowDbg,
    make_predictor,
)
from .stabilizers import (
    STABILIZER_KINDS,
    DksPointers,
    build_prefix_groups,
    level_groups_for,
    make_stabilizer,
)

logger = logging.getLogger(__name__)

DEFAULT_SEARCH_CAP = 2000


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SimConfig:
    capacity: int = 1024
    slots: int = 168
    topologies: int = 100
    backup_size: int = 40
    stabilizer: str = "interlaced"
    predictor: str = "swdbg"
    timeout_multiplier: float = 2.0
    rtt_base_ms: float = 10.0
    rtt_per_unit_ms: float = 100.0
    search_cap: Optional[int] = DEFAULT_SEARCH_CAP
    seed: int = 1
    rejoin: str = "fresh"
    pred_error_mode: str = "window"
    max_state_size: int = DEFAULT_MAX_STATE_SIZE
    churn: ChurnModel = field(default_factory=ChurnModel)

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.capacity) or self.capacity < 2:
            raise ConfigError(f"capacity must be a power of two >= 2, got {self.capacity}")
        if self.slots < 1:
            raise ConfigError("slots must be >= 1")
        if self.topologies < 1:
            raise ConfigError("topologies must be >= 1")
        if self.backup_size < 0:
            raise ConfigError("backup-size must be >= 0")
        if self.stabilizer not in STABILIZER_KINDS:
            raise ConfigError(f"unknown stabilizer: {self.stabilizer}")
        if self.predictor not in PREDICTOR_KINDS:
            raise ConfigError(f"unknown predictor: {self.predictor}")
        if self.timeout_multiplier <= 0:
            raise ConfigError("timeout-multiplier must be positive")
        if self.rtt_base_ms < 0 or self.rtt_per_unit_ms < 0:
            raise ConfigError("rtt parameters must be >= 0")
        if self.search_cap is not None and self.search_cap < 0:
            raise ConfigError("search-cap must be >= 0")
        if self.rejoin not in ("fresh", "stale"):
            raise ConfigError(f"unknown rejoin mode: {self.rejoin}")
        if self.pred_error_mode not in ("window", "instant"):
            raise ConfigError(f"unknown pred-error mode: {self.pred_error_mode}")


def rtt_ms(a: NodeIdentity, b: NodeIdentity, base_ms: float, per_unit_ms: float) -> float:
    """Synthetic symmetric round trip time from unit-square coordinates."""
    return base_ms + per_unit_ms * math.hypot(a.coords[0] - b.coords[0], a.coords[1] - b.coords[1])


@dataclass
class SlotMetrics:
    slot_index: int
    online_count: int = 0
    searches_initiated: int = 0
    searches_succeeded: int = 0
    sum_latency_ms: float = 0.0
    sum_prediction_error: float = 0.0
    prediction_samples: int = 0
    resolve_invocations: int = 0
    resolve_messages: int = 0
    backup_entries_sum: int = 0
    backup_samples: int = 0
    right_size_sum: int = 0
    right_size_samples: int = 0


@dataclass(frozen=True)
class SearchOutcome:
    success: bool
    latency_ms: float
    hops: int
    resolve_invocations: int
    resolve_messages: int
    result_num_id: int


@dataclass(frozen=True)
class TopologySummary:
    """Per-run values used for across-run dispersion."""

    searches: int
    successes: int
    latency_sum_ms: float
    prediction_error_sum: float
    prediction_samples: int


@dataclass
class RunMetrics:
    """Raw totals of one or more topology runs; averages are derived."""

    runs: int
    slots: int
    levels: int
    searches_initiated: int = 0
    searches_succeeded: int = 0
    latency_sum_ms: float = 0.0
    prediction_error_sum: float = 0.0
    prediction_samples: int = 0
    resolve_invocations: int = 0
    resolve_messages: int = 0
    backup_entries_sum: int = 0
    backup_samples: int = 0
    right_size_sum: int = 0
    right_size_samples: int = 0
    slot_series: list[SlotMetrics] = field(default_factory=list)
    per_topology: list[TopologySummary] = field(default_factory=list)

    @property
    def avg_success_ratio(self) -> float:
        return self.searches_succeeded / self.searches_initiated if self.searches_initiated else 0.0

    @property
    def avg_search_latency_ms(self) -> float:
        return self.latency_sum_ms / self.searches_initiated if self.searches_initiated else 0.0

    @property
    def avg_prediction_error(self) -> float:
        return self.prediction_error_sum / self.prediction_samples if self.prediction_samples else 0.0

    @property
    def avg_resolve_messages(self) -> float:
        return self.resolve_messages / self.resolve_invocations if self.resolve_invocations else 0.0

    @property
    def avg_backup_neighbors_per_level(self) -> float:
        if not self.backup_samples:
            return 0.0
        return self.backup_entries_sum / self.backup_samples / self.levels

    @property
    def avg_right_state_size(self) -> float:
        return self.right_size_sum / self.right_size_samples if self.right_size_samples else 0.0

    def _per_topology_values(self, metric: str) -> tuple[list[float], list[float]]:
        values, weights = [], []
        for t in self.per_topology:
            if metric == "success" and t.searches:
                values.append(t.successes / t.searches)
                weights.append(t.searches)
            elif metric == "latency" and t.searches:
                values.append(t.latency_sum_ms / t.searches)
                weights.append(t.searches)
            elif metric == "error" and t.prediction_samples:
                values.append(t.prediction_error_sum / t.prediction_samples)
                weights.append(t.prediction_samples)
        return values, weights

    def _weighted_std(self, metric: str) -> float:
        values, weights = self._per_topology_values(metric)
        if not values:
            return 0.0
        v = np.asarray(values)
        w = np.asarray(weights, dtype=float)
        mean = float(np.average(v, weights=w))
        return float(math.sqrt(np.average((v - mean) ** 2, weights=w)))

    @property
    def std_success_ratio(self) -> float:
        return self._weighted_std("success")

    @property
    def std_search_latency_ms(self) -> float:
        return self._weighted_std("latency")

    @property
    def std_prediction_error(self) -> float:
        return self._weighted_std("error")


class NodeRuntime:
    __slots__ = (
        "identity",
        "lookup",
        "stabilizer",
        "predictor",
        "online",
        "session_left",
        "last_pred_slot",
        "joined_once",
    )

    def __init__(self, identity: NodeIdentity, stabilizer, predictor):
        self.identity = identity
        self.lookup: Optional[LookupTable] = None
        self.stabilizer = stabilizer
        self.predictor = predictor
        self.online = False
        self.session_left = 0
        self.last_pred_slot = -1
        self.joined_once = False


class SimulationState:
    """Mutable state of one topology run."""

    def __init__(self, config: SimConfig, topology: TopologySnapshot, rng: np.random.Generator):
        self.config = config
        self.topology = topology
        self.rng = rng
        self.levels = topology.name_length
        self.nodes: dict[int, NodeRuntime] = {}
        for ident in topology.nodes:
            stab = make_stabilizer(config.stabilizer, ident, self.levels, config.backup_size)
            pred = make_predictor(
                config.predictor,
                config.capacity,
                max_state_size=config.max_state_size,
                error_mode=config.pred_error_mode,
            )
            self.nodes[ident.num_id] = NodeRuntime(ident, stab, pred)
        self.all_ids = sorted(self.nodes)
        self.online_ids: list[int] = []
        self.offline_ids: list[int] = list(self.all_ids)
        self.slot_index = 0
        self._prefix_groups = None
        self.trace_sink: Optional[Callable[[dict], None]] = None

    def is_online(self, num_id: int) -> bool:
        return self.nodes[num_id].online

    def _groups_for(self, ident: NodeIdentity):
        if self._prefix_groups is None:
            self._prefix_groups = build_prefix_groups(self.topology)
        return level_groups_for(self._prefix_groups, ident)

    def bring_online(self, num_id: int, session_slots: int, slot: int) -> None:
        node = self.nodes[num_id]
        node.online = True
        node.session_left = session_slots
        for _ in range(node.last_pred_slot + 1, slot):
            node.predictor.update(0)
        node.last_pred_slot = slot - 1
        pos = bisect_left(self.offline_ids, num_id)
        if pos < len(self.offline_ids) and self.offline_ids[pos] == num_id:
            del self.offline_ids[pos]
        insort(self.online_ids, num_id)

    def join(self, num_id: int) -> None:
        # Departing is a crash: a returning node rebuilds its lookup table and
        # starts with an empty stabilizer store (kept under rejoin = stale).
        node = self.nodes[num_id]
        fresh = node.lookup is None or self.config.rejoin == "fresh"
        if fresh:
            node.lookup = join_node(self.topology, num_id, self.online_ids)
        if isinstance(node.stabilizer, DksPointers):
            if node.joined_once:
                node.stabilizer.initialize()
            else:
                node.stabilizer.initialize(self._groups_for(node.identity))
        elif fresh and node.joined_once:
            node.stabilizer.reset()
        node.joined_once = True

    def take_offline(self, num_id: int) -> None:
        node = self.nodes[num_id]
        node.online = False
        node.session_left = 0
        pos = bisect_left(self.online_ids, num_id)
        if pos < len(self.online_ids) and self.online_ids[pos] == num_id:
            del self.online_ids[pos]
        insort(self.offline_ids, num_id)


def _piggyback_entry(node: NodeRuntime) -> PiggybackEntry:
    ident = node.identity
    sop = min(1.0, max(0.0, node.predictor.prediction))
    return PiggybackEntry(ident.address, ident.num_id, ident.name_id, sop)


def run_search(state: SimulationState, initiator: int, target: int) -> SearchOutcome:
    """Route one search for ``target`` starting at ``initiator``.

    Forwards to an online neighbor cost one round trip and extend the
    piggyback; forwards that hit an offline neighbor cost a timeout and then
    consult the stabilizer, whose contact trace is charged per attempt (a
    timeout per offline candidate, one round trip for the online one, which
    also carries the redirect).  A failed resolution descends, or ends the
    search at level 0 with the executor as result.
    """
    nodes = state.nodes
    cfg = state.config
    base_ms = cfg.rtt_base_ms
    per_unit = cfg.rtt_per_unit_ms
    timeout_mult = cfg.timeout_multiplier
    current = nodes[initiator]
    trace_hops: Optional[list] = [] if state.trace_sink else None

    if initiator == target:
        outcome = SearchOutcome(True, 0.0, 0, 0, 0, initiator)
        _emit_trace(state, initiator, target, trace_hops, outcome)
        return outcome

    direction = Direction.RIGHT if target > initiator else Direction.LEFT
    msg = SearchMessage(
        target_num_id=target,
        level=state.levels - 1,
        direction=direction,
        initiator=current.identity.address,
    )
    latency = 0.0
    hops = 0
    resolve_inv = 0
    resolve_msgs = 0
    step_guard = 40 * cfg.capacity + 100

    while True:
        step_guard -= 1
        if step_guard <= 0:
            raise RuntimeError("search did not terminate; routing invariant broken")
        decision = route_step(current.identity.num_id, current.lookup, msg)
        if decision.action == "terminate":
            result = current
            break
        if decision.action == "descend":
            msg.level = decision.level
            continue
        nb = decision.neighbor
        nb_node = nodes[nb.num_id]
        hop_rtt = rtt_ms(current.identity, nb_node.identity, base_ms, per_unit)
        if nb_node.online:
            latency += hop_rtt
            msg.add_piggyback(_piggyback_entry(current))
            msg.hops += 1
            hops += 1
            nb_node.predictor.record_incoming()
            nb_node.stabilizer.update(nb_node.lookup, list(msg.piggyback.values()))
            if trace_hops is not None:
                trace_hops.append(
                    {"from": current.identity.num_id, "to": nb.num_id, "level": msg.level, "kind": "forward"}
                )
            current = nb_node
            continue

        # timeout failure on the lookup neighbor
        latency += timeout_mult * hop_rtt
        candidate, contact_trace = current.stabilizer.resolve(
            target, msg.level, msg.direction, msg, state.is_online
        )
        resolve_inv += 1
        resolve_msgs += len(contact_trace)
        for attempt in contact_trace:
            other = nodes[attempt.num_id]
            ping_rtt = rtt_ms(current.identity, other.identity, base_ms, per_unit)
            if attempt.online:
                latency += ping_rtt
                other.predictor.record_incoming()
            else:
                latency += timeout_mult * ping_rtt
        if trace_hops is not None:
            trace_hops.append(
                {
                    "from": current.identity.num_id,
                    "level": msg.level,
                    "kind": "resolve",
                    "failed_neighbor": nb.num_id,
                    "contacts": [[a.num_id, a.online] for a in contact_trace],
                }
            )
        if candidate is not None:
            msg.add_piggyback(_piggyback_entry(current))
            msg.hops += 1
            hops += 1
            cand_node = nodes[candidate.num_id]
            cand_node.stabilizer.update(cand_node.lookup, list(msg.piggyback.values()))
            if trace_hops is not None:
                trace_hops.append(
                    {"from": current.identity.num_id, "to": candidate.num_id, "level": msg.level, "kind": "redirect"}
                )
            current = cand_node
            continue
        if msg.level > 0:
            msg.level -= 1
            continue
        result = current
        break

    outcome = SearchOutcome(
        success=result.identity.num_id == target,
        latency_ms=latency,
        hops=hops,
        resolve_invocations=resolve_inv,
        resolve_messages=resolve_msgs,
        result_num_id=result.identity.num_id,
    )
    _emit_trace(state, initiator, target, trace_hops, outcome)
    return outcome


def _emit_trace(state, initiator, target, trace_hops, outcome: SearchOutcome) -> None:
    if state.trace_sink is None:
        return
    state.trace_sink(
        {
            "slot": state.slot_index,
            "initiator": initiator,
            "target": target,
            "success": outcome.success,
            "latency_ms": outcome.latency_ms,
            "hops": trace_hops,
            "result": outcome.result_num_id,
        }
    )


def _process_arrivals(state: SimulationState, slot: int) -> None:
    cfg = state.config
    rng = state.rng
    churn = cfg.churn
    if churn.kind == "debian":
        count = min(draw_arrival_count(churn, rng), len(state.offline_ids))
        if count <= 0:
            return
        picks = rng.choice(len(state.offline_ids), size=count, replace=False)
        chosen = sorted(state.offline_ids[i] for i in picks.tolist())
        for num_id in chosen:
            state.bring_online(num_id, draw_session_length(churn, rng), slot)
        for num_id in chosen:
            state.join(num_id)
    else:
        q = churn.uniform_q
        draws = rng.random(len(state.all_ids))
        target_online = {
            nid for nid, u in zip(state.all_ids, draws.tolist()) if u >= q
        }
        leavers = [nid for nid in state.online_ids if nid not in target_online]
        for nid in leavers:
            state.take_offline(nid)
        arrivals = sorted(nid for nid in target_online if not state.nodes[nid].online)
        for nid in arrivals:
            state.bring_online(nid, 0, slot)
        for nid in arrivals:
            state.join(nid)


def run_slot(state: SimulationState) -> SlotMetrics:
    """Advance the simulation by one slot and collect its metrics."""
    slot = state.slot_index
    cfg = state.config
    rng = state.rng
    metrics = SlotMetrics(slot_index=slot)

    _process_arrivals(state, slot)
    online = state.online_ids
    n_o = len(online)
    metrics.online_count = n_o

    if n_o >= 1:
        max_pairs = n_o * (n_o - 1) // 2
        count = int(rng.integers(0, max_pairs + 1)) if max_pairs > 0 else 0
        if cfg.search_cap is not None:
            count = min(count, cfg.search_cap)
        for _ in range(count):
            initiator = online[int(rng.integers(n_o))]
            target = online[int(rng.integers(n_o))]
            outcome = run_search(state, initiator, target)
            metrics.searches_initiated += 1
            metrics.searches_succeeded += 1 if outcome.success else 0
            metrics.sum_latency_ms += outcome.latency_ms
            metrics.resolve_invocations += outcome.resolve_invocations
            metrics.resolve_messages += outcome.resolve_messages

    # end-of-slot status updates for every node online during this slot
    nodes = state.nodes
    for nid in online:
        node = nodes[nid]
        node.predictor.update(1)
        node.last_pred_slot = slot

    # prediction error sampled for every registered node
    err_sum = 0.0
    sample_swdbg = cfg.predictor == "swdbg"
    for nid in state.all_ids:
        node = nodes[nid]
        status = 1 if node.online else 0
        err_sum += abs(node.predictor.prediction - status)
        if sample_swdbg:
            metrics.right_size_sum += node.predictor.right.state_size
            metrics.right_size_samples += 1
    metrics.sum_prediction_error = err_sum
    metrics.prediction_samples = len(state.all_ids)

    if cfg.stabilizer != "none":
        for nid in online:
            metrics.backup_entries_sum += nodes[nid].stabilizer.total_entries()
            metrics.backup_samples += 1

    # expired sessions depart at the very end of the slot
    if cfg.churn.kind == "debian":
        for nid in list(online):
            node = nodes[nid]
            node.session_left -= 1
            if node.session_left <= 0:
                state.take_offline(nid)

    state.slot_index += 1
    return metrics


def topology_seed(seed: int, topology_index: int) -> int:
    ss = np.random.SeedSequence([seed, topology_index, 0])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_topology(
    config: SimConfig,
    topology_index: int,
    trace_sink: Optional[Callable[[dict], None]] = None,
) -> RunMetrics:
    """Simulate one topology for ``config.slots`` slots."""
    topo = generate_topology(config.capacity, topology_seed(config.seed, topology_index))
    rng = np.random.default_rng([config.seed, topology_index, 1])
    state = SimulationState(config, topo, rng)
    state.trace_sink = trace_sink
    slot_series = [run_slot(state) for _ in range(config.slots)]

    run = RunMetrics(runs=1, slots=config.slots, levels=state.levels, slot_series=slot_series)
    for sm in slot_series:
        run.searches_initiated += sm.searches_initiated
        run.searches_succeeded += sm.searches_succeeded
        run.latency_sum_ms += sm.sum_latency_ms
        run.prediction_error_sum += sm.sum_prediction_error
        run.prediction_samples += sm.prediction_samples
        run.resolve_invocations += sm.resolve_invocations
        run.resolve_messages += sm.resolve_messages
        run.backup_entries_sum += sm.backup_entries_sum
        run.backup_samples += sm.backup_samples
        run.right_size_sum += sm.right_size_sum
        run.right_size_samples += sm.right_size_samples
    run.per_topology = [
        TopologySummary(
            searches=run.searches_initiated,
            successes=run.searches_succeeded,
            latency_sum_ms=run.latency_sum_ms,
            prediction_error_sum=run.prediction_error_sum,
            prediction_samples=run.prediction_samples,
        )
    ]
    return run


def aggregate(runs: list[RunMetrics]) -> RunMetrics:
    """Merge topology runs; totals add up, slot series merge index-wise."""
    if not runs:
        raise ValueError("nothing to aggregate")
    slots = runs[0].slots
    levels = runs[0].levels
    if any(r.slots != slots or r.levels != levels for r in runs):
        raise ValueError("runs must share slot count and level count")
    merged = RunMetrics(runs=sum(r.runs for r in runs), slots=slots, levels=levels)
    merged.slot_series = [SlotMetrics(slot_index=i) for i in range(slots)]
    for r in runs:
        merged.searches_initiated += r.searches_initiated
        merged.searches_succeeded += r.searches_succeeded
        merged.latency_sum_ms += r.latency_sum_ms
        merged.prediction_error_sum += r.prediction_error_sum
        merged.prediction_samples += r.prediction_samples
        merged.resolve_invocations += r.resolve_invocations
        merged.resolve_messages += r.resolve_messages
        merged.backup_entries_sum += r.backup_entries_sum
        merged.backup_samples += r.backup_samples
        merged.right_size_sum += r.right_size_sum
        merged.right_size_samples += r.right_size_samples
        merged.per_topology.extend(r.per_topology)
        for i, sm in enumerate(r.slot_series):
            tgt = merged.slot_series[i]
            tgt.online_count += sm.online_count
            tgt.searches_initiated += sm.searches_initiated
            tgt.searches_succeeded += sm.searches_succeeded
            tgt.sum_latency_ms += sm.sum_latency_ms
            tgt.sum_prediction_error += sm.sum_prediction_error
            tgt.prediction_samples += sm.prediction_samples
            tgt.resolve_invocations += sm.resolve_invocations
            tgt.resolve_messages += sm.resolve_messages
            tgt.backup_entries_sum += sm.backup_entries_sum
            tgt.backup_samples += sm.backup_samples
            tgt.right_size_sum += sm.right_size_sum
            tgt.right_size_samples += sm.right_size_samples
    return merged


def slot_metrics_dict(sm: SlotMetrics) -> dict:
    return asdict(sm)
