"""Availability predictors.

Every predictor consumes one status bit per time slot (1 online, 0 offline)
and exposes ``prediction``, its current estimate of the node's availability
probability in [0, 1].

The De Bruijn graph predictor keeps empirical transition counts between k-bit
uptime histories and reports the stationary probability mass of the states
whose newest bit is 1.  The chain built from a finite trace is rarely ergodic
over the full state space, so the estimate is computed on the terminal
strongly-connected class reachable from the current state; when several
terminal classes are reachable (possible after a state-size change) their
stationary values are mixed by absorption probability.  A class consisting
solely of online-ending or offline-ending states degenerates to 1 or 0.

The sliding-window predictor holds three De Bruijn graphs of consecutive state
sizes and shifts the window towards whichever size currently tracks the recent
uptime fraction best.
"""

from __future__ import annotations

import logging
from collections import deque
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

PREDICTOR_KINDS = ("swdbg", "dbg1", "dbg2", "dbg3", "dbg4", "lifetime", "ludp")

DEFAULT_MAX_STATE_SIZE = 8


def prediction_error(predicted: float, status: int) -> float:
    """Absolute difference between a predicted probability and a status bit."""
    if not 0.0 <= predicted <= 1.0:
        raise ValueError(f"predicted probability out of range: {predicted}")
    return abs(predicted - (1 if status else 0))


def _stationary_core(P: np.ndarray) -> np.ndarray:
    """Solve pi = pi P with sum(pi) = 1 for an irreducible stochastic P."""
    m = P.shape[0]
    if m == 1:
        return np.ones(1)
    A = P.T - np.eye(m)
    A[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    return np.linalg.solve(A, rhs)


def solve_stationary(transition_matrix) -> np.ndarray:
    """Stationary distribution of an irreducible chain, by direct linear solve.

    Raises ``ValueError("non-ergodic chain")`` when the positive-probability
    graph is not strongly connected.  The result satisfies pi = pi P and
    sums to 1 within an absolute residual of 1e-9.
    """
    P = np.asarray(transition_matrix, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("transition matrix must be square")
    m = P.shape[0]
    rows = P.sum(axis=1)
    if not np.allclose(rows, 1.0, atol=1e-9):
        raise ValueError("rows of the transition matrix must sum to 1")
    adj = [np.flatnonzero(P[i] > 0.0).tolist() for i in range(m)]
    radj = [[] for _ in range(m)]
    for i in range(m):
        for j in adj[i]:
            radj[j].append(i)

    def reachable(start, graph):
        seen = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for w in graph[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    if len(reachable(0, adj)) != m or len(reachable(0, radj)) != m:
        raise ValueError("non-ergodic chain")
    pi = _stationary_core(P)
    residual = float(np.max(np.abs(pi @ P - pi)))
    if residual > 1e-9 or abs(float(pi.sum()) - 1.0) > 1e-9:
        raise ArithmeticError(f"stationary solve residual too large: {residual}")
    return pi


def _tarjan_sccs(nodes: list[int], succ: dict[int, tuple[int, ...]]) -> list[list[int]]:
    """Strongly connected components (iterative Tarjan) in reverse topological
    order: successors of a component appear before it in the result."""
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work: list[list] = [[root, 0]]
        while work:
            frame = work[-1]
            v = frame[0]
            if frame[1] == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            descended = False
            children = succ[v]
            i = frame[1]
            while i < len(children):
                w = children[i]
                i += 1
                if w not in index:
                    frame[1] = i
                    work.append([w, 0])
                    descended = True
                    break
                if w in on_stack and index[w] < low[v]:
                    low[v] = index[w]
            if descended:
                continue
            frame[1] = i
            work.pop()
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(comp)
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
    return sccs


class Dbg:
    """Empirical De Bruijn graph over k-bit uptime histories.

    Transition counts are kept as floats: merging two states during a shrink
    averages their probabilities while preserving total transition mass, which
    is generally not representable with integers.
    """

    __slots__ = (
        "state_size",
        "max_state_size",
        "bits_seen",
        "ones_seen",
        "_mask",
        "_counts",
        "_visits",
        "_current",
        "_warm",
        "_recent",
    )

    def __init__(self, state_size: int, max_state_size: int = DEFAULT_MAX_STATE_SIZE):
        if state_size < 1:
            raise ValueError("state size must be >= 1")
        if state_size > max_state_size:
            raise ValueError("state size exceeds the configured cap")
        self.state_size = state_size
        self.max_state_size = max_state_size
        self.bits_seen = 0
        self.ones_seen = 0
        self._mask = (1 << state_size) - 1
        self._counts: dict[int, list[float]] = {}
        self._visits: dict[int, int] = {}
        self._current: Optional[int] = None
        self._warm: deque[int] = deque(maxlen=state_size)
        self._recent: deque[int] = deque(maxlen=max_state_size + 1)

    @property
    def current_state(self) -> Optional[int]:
        return self._current

    def visit_count(self, state: int) -> int:
        return self._visits.get(state, 0)

    def transition_counts(self, state: int) -> tuple[float, float]:
        row = self._counts.get(state)
        return (row[0], row[1]) if row else (0.0, 0.0)

    def transition_probability(self, state: int, bit: int) -> Optional[float]:
        row = self._counts.get(state)
        if not row:
            return None
        total = row[0] + row[1]
        return row[bit] / total if total > 0 else None

    def _warm_fraction(self) -> float:
        return self.ones_seen / self.bits_seen if self.bits_seen else 0.0

    def update(self, status: int) -> float:
        """Feed one status bit; returns the updated availability estimate.

        Until ``state_size`` prior bits exist the estimate is the plain
        fraction of online bits seen so far.
        """
        status = 1 if status else 0
        self.bits_seen += 1
        self.ones_seen += status
        self._recent.append(status)
        if self._current is None:
            self._warm.append(status)
            if len(self._warm) == self.state_size:
                st = 0
                for b in self._warm:
                    st = (st << 1) | b
                self._current = st
                self._visits[st] = self._visits.get(st, 0) + 1
            return self._warm_fraction()
        prev = self._current
        row = self._counts.get(prev)
        if row is None:
            row = [0.0, 0.0]
            self._counts[prev] = row
        row[status] += 1.0
        nxt = ((prev << 1) & self._mask) | status
        self._current = nxt
        self._visits[nxt] = self._visits.get(nxt, 0) + 1
        return self.stationary_online_probability()

    def stationary_online_probability(self) -> float:
        """Long-run probability of an online slot under the observed chain."""
        if self._current is None:
            return self._warm_fraction()
        if self.ones_seen == self.bits_seen:
            return 1.0
        if self.ones_seen == 0:
            return 0.0
        mask = self._mask
        counts = self._counts
        cur = self._current
        reach = {cur}
        stack = [cur]
        while stack:
            s = stack.pop()
            row = counts.get(s)
            if row is None:
                continue
            base = (s << 1) & mask
            if row[0] > 0.0 and base not in reach:
                reach.add(base)
                stack.append(base)
            t1 = base | 1
            if row[1] > 0.0 and t1 not in reach:
                reach.add(t1)
                stack.append(t1)
        if len(reach) == 1:
            return float(cur & 1)

        prob_edges: dict[int, list[tuple[int, float]]] = {}
        succ: dict[int, tuple[int, ...]] = {}
        for s in reach:
            row = counts.get(s)
            if row is None:
                succ[s] = ()
                continue
            total = row[0] + row[1]
            base = (s << 1) & mask
            edges = []
            if row[0] > 0.0:
                edges.append((base, row[0] / total))
            if row[1] > 0.0:
                edges.append((base | 1, row[1] / total))
            prob_edges[s] = edges
            succ[s] = tuple(t for t, _ in edges)

        sccs = _tarjan_sccs(sorted(reach), succ)
        comp_id = {}
        for i, comp in enumerate(sccs):
            for s in comp:
                comp_id[s] = i
        terminal = [
            all(comp_id[w] == i for s in comp for w in succ[s]) for i, comp in enumerate(sccs)
        ]

        def class_sop(i: int) -> float:
            comp = sccs[i]
            ones = sum(1 for s in comp if s & 1)
            if ones == 0:
                return 0.0
            if ones == len(comp):
                return 1.0
            if len(comp) == 2:
                a, b = comp
                if a & 1:
                    a, b = b, a
                p_up = next(p for t, p in prob_edges[a] if t == b)
                p_down = next(p for t, p in prob_edges[b] if t == a)
                return p_up / (p_up + p_down)
            idx = {s: j for j, s in enumerate(comp)}
            P = np.zeros((len(comp), len(comp)))
            for s in comp:
                for t, p in prob_edges[s]:
                    P[idx[s], idx[t]] = p
            pi = _stationary_core(P)
            return float(sum(pi[idx[s]] for s in comp if s & 1))

        cur_comp = comp_id[cur]
        if terminal[cur_comp]:
            return class_sop(cur_comp)

        transient = [s for s in reach if not terminal[comp_id[s]]]
        t_idx = {s: j for j, s in enumerate(transient)}
        m = len(transient)
        Q = np.zeros((m, m))
        r = np.zeros(m)
        sop_cache: dict[int, float] = {}
        for s in transient:
            j = t_idx[s]
            for t, p in prob_edges[s]:
                if t in t_idx:
                    Q[j, t_idx[t]] += p
                else:
                    ci = comp_id[t]
                    if ci not in sop_cache:
                        sop_cache[ci] = class_sop(ci)
                    r[j] += p * sop_cache[ci]
        values = np.linalg.solve(np.eye(m) - Q, r)
        return float(min(1.0, max(0.0, values[t_idx[cur]])))

    def _seed_from_recent(self, recent: list[int]) -> None:
        self._recent = deque(recent, maxlen=self.max_state_size + 1)
        if len(recent) >= self.state_size:
            st = 0
            for b in recent[-self.state_size :]:
                st = (st << 1) | b
            self._current = st
        else:
            self._warm = deque(recent, maxlen=self.state_size)

    def enlarge(self) -> "Dbg":
        """Copy into a chain one bit wider.

        Every state maps to its two one-bit extensions; both inherit the
        parent's transition counts, visit counts split evenly with the
        remainder going to the 0-extension.
        """
        k2 = self.state_size + 1
        if k2 > self.max_state_size:
            raise ValueError("state size cap exceeded")
        child = Dbg(k2, max_state_size=self.max_state_size)
        for s, row in self._counts.items():
            child._counts[s << 1] = [row[0], row[1]]
            child._counts[(s << 1) | 1] = [row[0], row[1]]
        for s, v in self._visits.items():
            lo = v // 2
            if v - lo:
                child._visits[s << 1] = v - lo
            if lo:
                child._visits[(s << 1) | 1] = lo
        child.bits_seen = self.bits_seen
        child.ones_seen = self.ones_seen
        child._seed_from_recent(list(self._recent))
        return child

    def shrink(self) -> "Dbg":
        """Copy into a chain one bit narrower.

        States differing only in their newest bit merge; the merged transition
        probabilities are the arithmetic mean of the sources' probabilities,
        rescaled so total transition mass is preserved.
        """
        if self.state_size <= 1:
            raise ValueError("cannot shrink below state size 1")
        k2 = self.state_size - 1
        child = Dbg(k2, max_state_size=self.max_state_size)
        parents = {s >> 1 for s in self._counts}
        for m in parents:
            r0 = self._counts.get(m << 1)
            r1 = self._counts.get((m << 1) | 1)
            if r0 is None and r1 is None:
                continue
            if r0 is None or r1 is None:
                src = r0 if r0 is not None else r1
                child._counts[m] = [src[0], src[1]]
                continue
            t0 = r0[0] + r0[1]
            t1 = r1[0] + r1[1]
            mass = t0 + t1
            p0 = (r0[0] / t0 + r1[0] / t1) / 2.0
            p1 = (r0[1] / t0 + r1[1] / t1) / 2.0
            child._counts[m] = [p0 * mass, p1 * mass]
        for s, v in self._visits.items():
            if v:
                child._visits[s >> 1] = child._visits.get(s >> 1, 0) + v
        child.bits_seen = self.bits_seen
        child.ones_seen = self.ones_seen
        child._seed_from_recent(list(self._recent))
        return child


class SlidingWindowDbg:
    """Window of three consecutive-size De Bruijn graphs, sliding adaptively.

    After feeding a status bit to all three chains, each chain's prediction
    error is the absolute gap between its stationary estimate and the online
    fraction over its own state-size window of recent bits (``window`` mode)
    or the gap to the latest status bit (``instant`` mode).  Strictly
    improving errors towards the wide end grow the window; strictly improving
    errors towards the narrow end shrink it, clamped at state size 1.  The
    returned value is the estimate of the chain with the smallest error.
    """

    def __init__(
        self,
        max_state_size: int = DEFAULT_MAX_STATE_SIZE,
        error_mode: str = "window",
    ):
        if error_mode not in ("window", "instant"):
            raise ValueError(f"unknown error mode: {error_mode}")
        if max_state_size < 3:
            raise ValueError("max state size must allow the initial (1, 2, 3) window")
        self.max_state_size = max_state_size
        self.error_mode = error_mode
        self.left = Dbg(1, max_state_size)
        self.center = Dbg(2, max_state_size)
        self.right = Dbg(3, max_state_size)
        self.recent_status: deque[int] = deque(maxlen=max_state_size + 1)
        self.last_sop = 0.0

    @property
    def prediction(self) -> float:
        return self.last_sop

    def sizes(self) -> tuple[int, int, int]:
        return (self.left.state_size, self.center.state_size, self.right.state_size)

    def _error(self, sop: float, state_size: int, status: int) -> float:
        if self.error_mode == "instant":
            return abs(status - sop)
        bits = list(self.recent_status)[-state_size:]
        frac = sum(bits) / len(bits)
        return abs(sop - frac)

    def update(self, status: int) -> float:
        status = 1 if status else 0
        self.recent_status.append(status)
        dbgs = [self.left, self.center, self.right]
        sops = [d.update(status) for d in dbgs]
        errs = [self._error(sops[i], dbgs[i].state_size, status) for i in range(3)]

        while errs[0] > errs[1] > errs[2]:
            if dbgs[2].state_size + 1 > self.max_state_size:
                logger.debug("window enlarge refused at state size cap %d", self.max_state_size)
                break
            grown = dbgs[2].enlarge()
            dbgs = [dbgs[1], dbgs[2], grown]
            sop = grown.stationary_online_probability()
            sops = [sops[1], sops[2], sop]
            errs = [errs[1], errs[2], self._error(sop, grown.state_size, status)]

        while errs[0] < errs[1] < errs[2]:
            if dbgs[0].state_size == 1:
                break
            shrunk = dbgs[0].shrink()
            dbgs = [shrunk, dbgs[0], dbgs[1]]
            sop = shrunk.stationary_online_probability()
            sops = [sop, sops[0], sops[1]]
            errs = [self._error(sop, shrunk.state_size, status), errs[0], errs[1]]

        self.left, self.center, self.right = dbgs
        best = min(range(3), key=lambda i: errs[i])
        self.last_sop = sops[best]
        return self.last_sop

    def record_incoming(self) -> None:
        pass


class FixedDbgPredictor:
    """A single fixed-size De Bruijn chain behind the predictor interface."""

    def __init__(self, state_size: int, max_state_size: int = DEFAULT_MAX_STATE_SIZE):
        self.dbg = Dbg(state_size, max_state_size=max(state_size, max_state_size))
        self.prediction = 0.0

    def update(self, status: int) -> float:
        self.prediction = self.dbg.update(status)
        return self.prediction

    def record_incoming(self) -> None:
        pass


def lifetime_availability(online_slots: int, elapsed_slots: int) -> float:
    """Fraction of elapsed slots the node was online; 0 before any slot."""
    if elapsed_slots == 0:
        return 0.0
    if online_slots > elapsed_slots:
        raise ValueError("online slots cannot exceed elapsed slots")
    return online_slots / elapsed_slots


class LifetimePredictor:
    def __init__(self):
        self.online_slots = 0
        self.elapsed_slots = 0
        self.prediction = 0.0

    def update(self, status: int) -> float:
        self.elapsed_slots += 1
        self.online_slots += 1 if status else 0
        self.prediction = lifetime_availability(self.online_slots, self.elapsed_slots)
        return self.prediction

    def record_incoming(self) -> None:
        pass


def ludp_online_probability(age_slots: int, incoming: int, slot: int, capacity: int) -> float:
    """Age-and-degree availability estimate, clamped to [0, 1]."""
    if slot < 1 or capacity < 1:
        raise ValueError("slot and capacity must be >= 1")
    value = (age_slots * incoming) / (slot * capacity)
    return min(1.0, max(0.0, value))


class LudpPredictor:
    """Estimates availability from accumulated uptime and incoming contacts.

    ``record_incoming`` counts every message or ping the node answers; without
    overlay traffic the estimate stays at 0.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.age_slots = 0
        self.incoming = 0
        self.slot = 0
        self.prediction = 0.0

    def update(self, status: int) -> float:
        self.slot += 1
        self.age_slots += 1 if status else 0
        self.prediction = ludp_online_probability(
            self.age_slots, self.incoming, self.slot, self.capacity
        )
        return self.prediction

    def record_incoming(self) -> None:
        self.incoming += 1
        if self.slot >= 1:
            self.prediction = ludp_online_probability(
                self.age_slots, self.incoming, self.slot, self.capacity
            )


def make_predictor(
    kind: str,
    capacity: int,
    max_state_size: int = DEFAULT_MAX_STATE_SIZE,
    error_mode: str = "window",
):
    if kind == "swdbg":
        return SlidingWindowDbg(max_state_size=max_state_size, error_mode=error_mode)
    if kind.startswith("dbg"):
        try:
            size = int(kind[3:])
        except ValueError:
            raise ValueError(f"unknown predictor kind: {kind}") from None
        if not 1 <= size <= 4:
            raise ValueError(f"unknown predictor kind: {kind}")
        return FixedDbgPredictor(size, max_state_size=max_state_size)
    if kind == "lifetime":
        return LifetimePredictor()
    if kind == "ludp":
        return LudpPredictor(capacity)
    raise ValueError(f"unknown predictor kind: {kind}")
