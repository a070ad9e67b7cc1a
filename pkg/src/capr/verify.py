"""Conflict-opacity checking over recorded histories.

A legal history is conflict opaque exactly when its conflict graph (vertices
are transactions, edges are real-time plus w-w / w-r / r-w conflict order) is
acyclic.  :func:`check_co_opaque` decides that and produces a witness: a
t-sequential order when the graph is acyclic, or a shortest cycle / illegal
read otherwise.  :func:`brute_force_opaque` is an independent enumeration
oracle for plain opacity on small histories.
"""

from __future__ import annotations

import heapq
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .history import T0, Event, History, Kind, Txn, complete

RT, WW, WR, RW = "RT", "w-w", "w-r", "r-w"
CONFLICT_LABELS = frozenset({WW, WR, RW})

Edge = Tuple[Txn, Txn]


class HistoryTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class IllegalRead:
    read: Event
    lastw: Optional[Txn]  # None when no committed writer precedes the read
    expected: Optional[int]
    position: int


@dataclass
class ConflictGraph:
    vertices: List[Txn]
    edges: Dict[Edge, Set[str]] = field(default_factory=dict)

    def add(self, u: Txn, v: Txn, label: str) -> None:
        if u != v:
            self.edges.setdefault((u, v), set()).add(label)

    def successors(self) -> Dict[Txn, List[Txn]]:
        succ: Dict[Txn, List[Txn]] = {v: [] for v in self.vertices}
        for u, v in self.edges:
            succ[u].append(v)
        return succ

    def conflict_edges(self) -> Dict[Edge, Set[str]]:
        out = {}
        for e, labels in self.edges.items():
            co = labels & CONFLICT_LABELS
            if co:
                out[e] = co
        return out


@dataclass
class Verdict:
    opaque: bool
    order: Optional[List[Txn]] = None
    cycle: Optional[List[Txn]] = None
    illegal: Optional[IllegalRead] = None
    graph: Optional[ConflictGraph] = None

    def report(self) -> str:
        if self.opaque:
            lines = ["VERDICT opaque", "ORDER " + " ".join(str(t) for t in self.order)]
        elif self.cycle is not None:
            lines = ["VERDICT not-opaque", "CYCLE " + " -> ".join(str(t) for t in self.cycle)]
        else:
            ill = self.illegal
            seq = ill.read.seq if ill.read.seq is not None else f"@{ill.position}"
            expected = "-" if ill.expected is None else ill.expected
            lines = ["VERDICT not-opaque", f"ILLEGAL seq={seq} expected={expected}"]
        return "\n".join(lines) + "\n"


def _commits_by_object(h: History) -> Dict[int, List[Tuple[int, Txn]]]:
    """Committed writers of each object as (commit position, txn), ascending."""
    out: Dict[int, List[Tuple[int, Txn]]] = defaultdict(list)
    for t in h.committed():
        info = h.txns[t]
        for obj in info.writes:
            out[obj].append((info.commit_pos, t))
    for lst in out.values():
        lst.sort()
    return out


def check_valid(h: History) -> Optional[Event]:
    """Return the first successful read no earlier committed writer explains."""
    committed_values: Dict[int, Set[int]] = defaultdict(lambda: {0})  # T0
    for e in h.events:
        if e.kind is Kind.COMMIT:
            for obj, val in h.txns[e.txn].writes.items():
                committed_values[obj].add(val)
        elif e.kind is Kind.READ:
            if e.value not in committed_values[e.obj]:
                return e
    return None


def check_legal(h: History) -> Optional[IllegalRead]:
    """Return the first read whose latest preceding committed writer disagrees."""
    latest: Dict[int, Tuple[Txn, int]] = {}
    for pos, e in enumerate(h.events):
        if e.kind is Kind.COMMIT:
            for obj, val in h.txns[e.txn].writes.items():
                latest[obj] = (e.txn, val)
        elif e.kind is Kind.READ:
            writer, val = latest.get(e.obj, (T0, 0))
            if val != e.value:
                return IllegalRead(e, writer, val, pos)
    return None


def build_conflict_graph(h: History) -> ConflictGraph:
    txns = sorted(h.txns, key=lambda t: h.txns[t].first)
    g = ConflictGraph([T0] + txns)

    # T0 is complete before everything and writes every object.
    for t in txns:
        g.add(T0, t, RT)
        info = h.txns[t]
        if info.reads:
            g.add(T0, t, WR)
        if info.status == "committed" and info.writes:
            g.add(T0, t, WW)

    completed = sorted((h.txns[t].last, t) for t in txns if h.txns[t].complete)
    for v in txns:
        first = h.txns[v].first
        for last, u in completed:
            if last >= first:
                break
            g.add(u, v, RT)

    writers = _commits_by_object(h)
    for lst in writers.values():
        for i, (_, u) in enumerate(lst):
            for _, v in lst[i + 1:]:
                g.add(u, v, WW)

    for t in txns:
        for pos in h.txns[t].reads:
            e = h.events[pos]
            for cpos, w in writers.get(e.obj, ()):
                if cpos < pos:
                    g.add(w, t, WR)
                else:
                    g.add(t, w, RW)
    return g


def _topological_order(g: ConflictGraph, rank: Dict[Txn, int]) -> Tuple[List[Txn], Set[Txn]]:
    """Kahn's algorithm, smallest rank first; returns (order, vertices left over)."""
    succ = g.successors()
    indeg = {v: 0 for v in g.vertices}
    for _, v in g.edges:
        indeg[v] += 1
    ready = [(rank[v], v) for v, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, u = heapq.heappop(ready)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, (rank[v], v))
    leftover = {v for v, d in indeg.items() if d > 0}
    return order, leftover


def _shortest_cycle(g: ConflictGraph, candidates: Iterable[Txn], rank: Dict[Txn, int]) -> List[Txn]:
    succ = g.successors()
    for v in succ:
        succ[v].sort(key=rank.__getitem__)
    best: Optional[List[Txn]] = None
    for start in sorted(candidates, key=rank.__getitem__):
        parent = {start: None}
        queue = deque([start])
        found = None
        while queue and found is None:
            u = queue.popleft()
            for v in succ[u]:
                if v == start:
                    found = u
                    break
                if v not in parent:
                    parent[v] = u
                    queue.append(v)
        if found is None:
            continue
        path = [found]
        while path[-1] != start:
            path.append(parent[path[-1]])
        cycle = [start] + path[::-1][1:] + [start]
        if best is None or len(cycle) < len(best):
            best = cycle
    assert best is not None, "leftover vertices without a cycle"
    return best


def sequential_history(h: History, order: List[Txn]) -> History:
    """The t-sequential history that runs each transaction of ``order`` in turn."""
    by_txn: Dict[Txn, List[Event]] = defaultdict(list)
    for e in h.events:
        by_txn[e.txn].append(e)
    return History(e for t in order if t != T0 for e in by_txn[t])


def check_co_opaque(h: History) -> Verdict:
    hc = complete(h)
    invalid = check_valid(hc)
    bad = check_legal(hc)
    if invalid is not None or bad is not None:
        # an invalid read is always illegal too, so ``bad`` carries the diagnostic
        return Verdict(False, illegal=bad)
    g = build_conflict_graph(hc)
    rank = {t: hc.txns[t].first for t in hc.txns}
    rank[T0] = -1
    order, leftover = _topological_order(g, rank)
    if leftover:
        return Verdict(False, cycle=_shortest_cycle(g, leftover, rank), graph=g)

    # Self-checks: the witness must be legal with the same conflict order.
    s = sequential_history(hc, order)
    if check_legal(s) is not None:
        raise AssertionError("witness order produced an illegal sequential history")
    if build_conflict_graph(s).conflict_edges() != g.conflict_edges():
        raise AssertionError("witness order does not preserve conflict order")
    return Verdict(True, order=order, graph=g)


def real_time_pairs(h: History) -> Set[Edge]:
    out = set()
    for u, ui in h.txns.items():
        if not ui.complete:
            continue
        for v, vi in h.txns.items():
            if u != v and ui.last < vi.first:
                out.add((u, v))
    return out


def brute_force_opaque(h: History, max_txns: int = 8) -> bool:
    """Decide opacity by enumerating real-time-respecting transaction orders.

    T0 is always first and is not counted against ``max_txns``.
    """
    hc = complete(h)
    txns = sorted(hc.txns, key=lambda t: hc.txns[t].first)
    if len(txns) > max_txns:
        raise HistoryTooLarge(f"{len(txns)} transactions exceed the limit of {max_txns}")
    if check_valid(hc) is not None:
        return False

    preds: Dict[Txn, Set[Txn]] = {t: set() for t in txns}
    for u, v in real_time_pairs(hc):
        preds[v].add(u)
    reads = {t: [(hc.events[p].obj, hc.events[p].value) for p in hc.txns[t].reads] for t in txns}
    writes = {t: hc.txns[t].writes if hc.txns[t].status == "committed" else {} for t in txns}

    placed: Set[Txn] = set()

    def extend(state: Dict[int, int]) -> bool:
        if len(placed) == len(txns):
            return True
        for t in txns:
            if t in placed or not preds[t] <= placed:
                continue
            if any(state.get(obj, 0) != val for obj, val in reads[t]):
                continue
            placed.add(t)
            if extend({**state, **writes[t]}):
                return True
            placed.discard(t)
        return False

    return extend({})


def sfm_positions(h: History) -> Dict[Txn, int]:
    """Position of each transaction's last successful memop (read or commit).

    Transactions that never completed a memop are absent.
    """
    out = {T0: -1}
    for t, info in h.txns.items():
        if info.commit_pos is not None:
            out[t] = info.commit_pos
        elif info.reads:
            out[t] = info.reads[-1]
    return out


def check_sfm_ordering(h: History) -> Optional[Edge]:
    """First conflict-graph edge whose endpoints' sfm events are out of order."""
    hc = complete(h)
    g = build_conflict_graph(hc)
    sfm = sfm_positions(hc)
    for (u, v) in sorted(g.edges):
        if u in sfm and v in sfm and not sfm[u] < sfm[v]:
            return (u, v)
    return None
