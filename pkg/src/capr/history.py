"""Event recording and the history model built on top of it.

The engine emits an already-linearized stream of atomic events.  Each
``(tx_id, incarnation)`` pair is its own transaction vertex: a rollback closes
incarnation ``k`` with an ``RA`` event and the retry continues as ``k + 1``.

Trace file layout (one event per line, tab separated)::

    #capr-trace v1
    seq  tx_id  incarnation  kind  object  value

``object``/``value`` are ``-`` when absent.
"""

from __future__ import annotations

import enum
import io
import re
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, TextIO

TRACE_HEADER = "#capr-trace v1"


class TraceError(ValueError):
    """A trace is unreadable or violates the per-incarnation event shape."""


class Kind(enum.Enum):
    BEGIN = "B"
    READ = "R"
    WRITE = "W"
    COMMIT = "C"
    ABORT = "A"
    ROLLBACK_ABORT = "RA"

    @property
    def terminal(self) -> bool:
        return self in (Kind.COMMIT, Kind.ABORT, Kind.ROLLBACK_ABORT)


class Txn(NamedTuple):
    """A transaction vertex: one incarnation of one transaction id."""

    tx: int
    inc: int

    def __str__(self) -> str:
        if self.tx == 0:
            return "T0"
        return f"T{self.tx}.{self.inc}"


T0 = Txn(0, 0)


@dataclass(frozen=True)
class Event:
    seq: Optional[int]  # None for aborts synthesized by completion
    tx: int
    inc: int
    kind: Kind
    obj: Optional[int] = None
    value: Optional[int] = None

    @property
    def txn(self) -> Txn:
        return Txn(self.tx, self.inc)

    def to_line(self) -> str:
        obj = "-" if self.obj is None else str(self.obj)
        value = "-" if self.value is None else str(self.value)
        return f"{self.seq}\t{self.tx}\t{self.inc}\t{self.kind.value}\t{obj}\t{value}"

    def __str__(self) -> str:
        name = str(self.txn)[1:]
        if self.kind is Kind.READ:
            return f"r{name}({self.obj},{self.value})"
        if self.kind is Kind.WRITE:
            return f"w{name}({self.obj},{self.value})"
        return {
            Kind.BEGIN: "b",
            Kind.COMMIT: "c",
            Kind.ABORT: "a",
            Kind.ROLLBACK_ABORT: "a",
        }[self.kind] + name


class HistoryRecorder:
    """Totally ordered, thread-safe append channel for engine events.

    Callers must hold the locks that serialize the operation being recorded,
    so the position an event receives is a valid linearization point.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._events: List[Event] = []

    def record(self, tx: int, inc: int, kind: Kind,
               obj: Optional[int] = None, value: Optional[int] = None) -> Event:
        with self._lock:
            event = Event(len(self._events), tx, inc, kind, obj, value)
            self._events.append(event)
        return event

    def __len__(self) -> int:
        return len(self._events)

    @property
    def events(self) -> List[Event]:
        with self._lock:
            return list(self._events)

    def dump(self) -> str:
        return dump_trace(self.events)


def dump_trace(events: Iterable[Event]) -> str:
    lines = [TRACE_HEADER]
    lines.extend(e.to_line() for e in events)
    return "\n".join(lines) + "\n"


def write_trace(events: Iterable[Event], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dump_trace(events))


def _int_field(text: str, what: str, lineno: int) -> Optional[int]:
    if text == "-":
        return None
    try:
        return int(text)
    except ValueError:
        raise TraceError(f"line {lineno}: bad {what} {text!r}") from None


def parse_trace(stream: TextIO) -> List[Event]:
    header = stream.readline().rstrip("\n")
    if header != TRACE_HEADER:
        raise TraceError(f"line 1: expected header {TRACE_HEADER!r}, got {header!r}")
    events = []
    for lineno, line in enumerate(stream, start=2):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise TraceError(f"line {lineno}: expected 6 tab-separated fields, got {len(parts)}")
        seq, tx, inc = (_int_field(p, n, lineno) for p, n in zip(parts[:3], ("seq", "tx_id", "incarnation")))
        if seq is None or tx is None or inc is None:
            raise TraceError(f"line {lineno}: seq, tx_id and incarnation are mandatory")
        try:
            kind = Kind(parts[3])
        except ValueError:
            raise TraceError(f"line {lineno}: unknown kind {parts[3]!r}") from None
        obj = _int_field(parts[4], "object", lineno)
        value = _int_field(parts[5], "value", lineno)
        if kind in (Kind.READ, Kind.WRITE) and (obj is None or value is None):
            raise TraceError(f"line {lineno}: {kind.name.lower()} needs object and value")
        events.append(Event(seq, tx, inc, kind, obj, value))
    return events


def read_trace(path) -> List[Event]:
    try:
        with open(path) as fh:
            return parse_trace(fh)
    except OSError as exc:
        raise TraceError(f"cannot read {path}: {exc}") from exc


def loads_trace(text: str) -> List[Event]:
    return parse_trace(io.StringIO(text))


@dataclass
class TxnInfo:
    """Per-vertex summary, positions are indices into ``History.events``."""

    txn: Txn
    positions: List[int] = field(default_factory=list)
    status: str = "live"  # committed | aborted | live
    commit_pos: Optional[int] = None
    # final value written per object; the value a commit publishes
    writes: Dict[int, int] = field(default_factory=dict)
    reads: List[int] = field(default_factory=list)

    @property
    def first(self) -> int:
        return self.positions[0]

    @property
    def last(self) -> int:
        return self.positions[-1]

    @property
    def complete(self) -> bool:
        return self.status != "live"


class History:
    """An ordered event sequence with an implicit initial transaction T0.

    Ordering is by list position, not by ``seq``; completion inserts events
    that have no sequence number of their own.
    """

    def __init__(self, events: Iterable[Event]):
        self.events: List[Event] = list(events)
        self.txns: Dict[Txn, TxnInfo] = {}
        for pos, e in enumerate(self.events):
            info = self.txns.get(e.txn)
            if info is None:
                info = self.txns[e.txn] = TxnInfo(e.txn)
            info.positions.append(pos)
            if e.kind is Kind.READ:
                info.reads.append(pos)
            elif e.kind is Kind.WRITE:
                info.writes[e.obj] = e.value
            elif e.kind is Kind.COMMIT:
                info.status = "committed"
                info.commit_pos = pos
            elif e.kind.terminal:
                info.status = "aborted"

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def objects(self) -> set:
        return {e.obj for e in self.events if e.obj is not None}

    def committed(self) -> List[Txn]:
        return [t for t, i in self.txns.items() if i.status == "committed"]

    def aborted(self) -> List[Txn]:
        return [t for t, i in self.txns.items() if i.status == "aborted"]

    def live(self) -> List[Txn]:
        return [t for t, i in self.txns.items() if i.status == "live"]

    def __str__(self) -> str:
        return " ".join(str(e) for e in self.events if e.kind is not Kind.BEGIN)


def complete(h: History) -> History:
    """Append an abort immediately after the last event of every live transaction."""
    live_last = {h.txns[t].last: t for t in h.live()}
    if not live_last:
        return h
    out = []
    for pos, e in enumerate(h.events):
        out.append(e)
        t = live_last.get(pos)
        if t is not None:
            out.append(Event(None, t.tx, t.inc, Kind.ABORT))
    return History(out)


def split_incarnations(raw: Iterable[Event]) -> History:
    """Validate an engine trace and materialize it as a history.

    Every ``(tx_id, incarnation)`` pair becomes its own vertex; ``RA`` closes
    an incarnation as aborted.  Raises :class:`TraceError` on any event that
    breaks the begin / operations / terminal shape or the incarnation chain.
    """
    events = list(raw)
    state: Dict[Txn, str] = {}  # open | closed
    current_inc: Dict[int, int] = {}
    prev_seq = None
    for e in events:
        if e.seq is not None:
            if prev_seq is not None and e.seq != prev_seq + 1:
                raise TraceError(f"seq {e.seq}: gap or reordering after seq {prev_seq}")
            prev_seq = e.seq
        where = f"seq {e.seq} ({e.kind.value} T{e.tx}.{e.inc})"
        if e.tx <= 0 or e.inc <= 0:
            raise TraceError(f"{where}: tx_id and incarnation must be positive")
        t = e.txn
        if e.kind is Kind.BEGIN:
            if t in state:
                raise TraceError(f"{where}: duplicate begin")
            expected = current_inc.get(e.tx, 0) + 1
            if e.inc != expected:
                raise TraceError(f"{where}: incarnation gap, expected {expected}")
            if expected > 1 and state[Txn(e.tx, expected - 1)] != "closed":
                raise TraceError(f"{where}: previous incarnation still open")
            state[t] = "open"
            current_inc[e.tx] = e.inc
            continue
        st = state.get(t)
        if st is None:
            raise TraceError(f"{where}: event before begin")
        if st == "closed":
            raise TraceError(f"{where}: event after terminal")
        if e.kind.terminal:
            state[t] = "closed"
    return History(events)


_NOTATION = re.compile(r"^(?P<op>[rwca])(?P<tx>\d+)(?:\.(?P<inc>\d+))?(?:\((?P<obj>\w+),(?P<val>-?\d+)\))?$")


def parse_notation(text: str, objects: Optional[Dict[str, int]] = None) -> History:
    """Build a history from compact notation such as ``r1(x,0) w2(y,5) c2``.

    Begin events are inserted before each transaction's first operation.
    Object names map through ``objects`` or, by default, to integers in
    sorted-name order.  ``r1.2(x,0)`` names incarnation 2 explicitly.
    """
    tokens = text.split()
    parsed = []
    for tok in tokens:
        m = _NOTATION.match(tok)
        if not m:
            raise TraceError(f"bad token {tok!r}")
        parsed.append(m)
    if objects is None:
        names = sorted({m["obj"] for m in parsed if m["obj"] is not None})
        objects = {n: i for i, n in enumerate(names)}
    kinds = {"r": Kind.READ, "w": Kind.WRITE, "c": Kind.COMMIT, "a": Kind.ABORT}
    events: List[Event] = []
    started = set()
    for m in parsed:
        tx = int(m["tx"])
        inc = int(m["inc"] or 1)
        if (tx, inc) not in started:
            started.add((tx, inc))
            events.append(Event(len(events), tx, inc, Kind.BEGIN))
        kind = kinds[m["op"]]
        obj = val = None
        if kind in (Kind.READ, Kind.WRITE):
            if m["obj"] is None:
                raise TraceError(f"{m.group(0)!r} needs (object,value)")
            obj, val = objects[m["obj"]], int(m["val"])
        events.append(Event(len(events), tx, inc, kind, obj, val))
    return split_incarnations(events)
