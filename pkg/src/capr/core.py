"""CaPR+ transactional memory: continuous conflict detection, lazy versioning,
automatic checkpointing and partial rollback.

A transaction body is a list of steps (:class:`Read`, :class:`Write`, and an
optional trailing :class:`Commit`).  The program location a rollback returns is
a step index into that list.  Every transaction-local variable lives in the
local data block, so restoring a checkpoint's snapshot is enough to resume.

Locking discipline: one lock per shared object and one per active-transaction
entry.  Every thread acquires object locks in ascending id order and only then
entry locks in ascending tx id order.
"""

from __future__ import annotations

import contextlib
import enum
import logging
import threading
from dataclasses import dataclass, field
from typing import (Callable, ContextManager, Dict, Hashable, Iterable, List,
                    Mapping, NamedTuple, Optional, Sequence, Set, Tuple, Union)

from .history import HistoryRecorder, Kind

log = logging.getLogger(__name__)


class Status(enum.Enum):
    GREEN = "GREEN"
    RED = "RED"


class Mode(str, enum.Enum):
    PARTIAL = "partial-rollback"
    FULL = "full-abort"


class UnknownObjectError(LookupError):
    """Read of an object that is neither local nor in shared memory."""


class InvariantViolation(RuntimeError):
    pass


class TxRollback(Exception):
    """The transaction was rolled back; resume the body at ``location``."""

    def __init__(self, location: int):
        super().__init__(location)
        self.location = location


# -- transaction bodies ------------------------------------------------------

ValueFn = Callable[[Mapping[Hashable, int]], int]


@dataclass(frozen=True)
class Read:
    obj: Hashable
    into: Optional[Hashable] = None  # local variable receiving the value


@dataclass(frozen=True)
class Write:
    obj: Hashable
    value: Union[int, ValueFn]

    def evaluate(self, ldb: Mapping[Hashable, int]) -> int:
        return self.value(ldb) if callable(self.value) else self.value


@dataclass(frozen=True)
class Commit:
    pass


COMMIT = Commit()
Step = Union[Read, Write, Commit]


def normalize_body(body: Sequence[Step]) -> List[Step]:
    """Strip an optional trailing commit; commit is implicit after the last step."""
    steps = list(body)
    if steps and isinstance(steps[-1], Commit):
        steps.pop()
    for s in steps:
        if isinstance(s, Commit):
            raise ValueError("commit may only appear as the last step")
        if not isinstance(s, (Read, Write)):
            raise TypeError(f"not a transaction step: {s!r}")
    return steps


# -- lock ordering -------------------------------------------------------------

LockKey = Tuple[int, int]  # (0, object id) or (1, tx id)


class LockOrderTracker:
    """Per-thread record of held locks; flags acquisitions out of global order."""

    def __init__(self) -> None:
        self._local = threading.local()
        self._lock = threading.Lock()
        self.violations: List[Tuple[Tuple[LockKey, ...], LockKey]] = []
        self.acquisitions = 0

    def _held(self) -> List[LockKey]:
        held = getattr(self._local, "held", None)
        if held is None:
            held = self._local.held = []
        return held

    def before_acquire(self, key: LockKey) -> None:
        held = self._held()
        if held and not held[-1] < key:
            with self._lock:
                self.violations.append((tuple(held), key))
            log.error("lock order violation: acquiring %s while holding %s", key, held)

    def acquired(self, key: LockKey) -> None:
        self._held().append(key)
        with self._lock:
            self.acquisitions += 1

    def released(self, key: LockKey) -> None:
        self._held().remove(key)

    def held(self) -> Tuple[LockKey, ...]:
        return tuple(self._held())


class OrderedLock:
    __slots__ = ("key", "_lock", "_tracker")

    def __init__(self, key: LockKey, tracker: Optional[LockOrderTracker] = None):
        self.key = key
        self._lock = threading.Lock()
        self._tracker = tracker

    def acquire(self) -> None:
        if self._tracker is not None:
            self._tracker.before_acquire(self.key)
        self._lock.acquire()
        if self._tracker is not None:
            self._tracker.acquired(self.key)

    def release(self) -> None:
        if self._tracker is not None:
            self._tracker.released(self.key)
        self._lock.release()

    def locked(self) -> bool:
        return self._lock.locked()


@contextlib.contextmanager
def _holding(locks: Iterable[OrderedLock]):
    taken: List[OrderedLock] = []
    try:
        for lk in locks:
            lk.acquire()
            taken.append(lk)
        yield
    finally:
        for lk in reversed(taken):
            lk.release()


# -- workspaces ----------------------------------------------------------------

class SosEntry(NamedTuple):
    value: int
    read: bool
    write: bool


@dataclass
class Checkpoint:
    victim: Optional[Hashable]  # None only for the implicit step-0 checkpoint
    location: int
    ldb: Dict[Hashable, int]
    sos: Dict[Hashable, SosEntry]


class OpRecord(NamedTuple):
    step: int
    kind: Kind
    obj: Hashable
    value: int


@dataclass
class TransactionDescriptor:
    tx_id: int
    body: List[Step]
    mode: Mode = Mode.PARTIAL
    incarnation: int = 1
    ldb: Dict[Hashable, int] = field(default_factory=dict)
    sos: Dict[Hashable, SosEntry] = field(default_factory=dict)
    cplog: List[Checkpoint] = field(default_factory=list)
    next_step: int = 0
    # recorded reads/writes of the current incarnation, replayed on rollback
    ops: List[OpRecord] = field(default_factory=list)
    shared_reads: int = 0
    finished: bool = False

    def write_set(self) -> List[Hashable]:
        return sorted(o for o, e in self.sos.items() if e.write)

    def read_set(self) -> List[Hashable]:
        return sorted(o for o, e in self.sos.items() if e.read)


@dataclass
class ActiveEntry:
    tx_id: int
    lock: OrderedLock
    status: Status = Status.GREEN
    conflicts: Set[Hashable] = field(default_factory=set)


@dataclass
class SharedCell:
    value: int
    lock: OrderedLock
    readers: Set[int] = field(default_factory=set)


class GlobalWorkspace:
    """Shared memory plus the table of active transactions.

    ``objects`` is either a count (ids ``0..n-1``) or an iterable of integer
    ids; all shared objects start at 0.  Any key not in shared memory is
    treated as a transaction-local variable.
    """

    def __init__(self, objects: Union[int, Iterable[int]], recorder: Optional[HistoryRecorder] = None,
                 debug: bool = False):
        if isinstance(objects, int):
            objects = range(objects)
        self.tracker = LockOrderTracker() if debug else None
        self.memory: Dict[int, SharedCell] = {
            o: SharedCell(0, OrderedLock((0, o), self.tracker)) for o in objects
        }
        self.active: Dict[int, ActiveEntry] = {}
        self.recorder = recorder if recorder is not None else HistoryRecorder()
        self._table_lock = threading.Lock()  # leaf lock: id allocation and table membership
        self._next_id = 1

    # -- inspection --

    def value(self, o: int) -> int:
        return self.memory[o].value

    def snapshot(self) -> Dict[int, int]:
        return {o: c.value for o, c in self.memory.items()}

    def readers(self, o: int) -> Set[int]:
        return set(self.memory[o].readers)

    def entry(self, tx_id: int) -> ActiveEntry:
        return self.active[tx_id]

    # -- Algorithm operations --

    def begin_tx(self, body: Sequence[Step] = (), mode: Mode = Mode.PARTIAL) -> TransactionDescriptor:
        steps = normalize_body(body)
        with self._table_lock:
            tx_id = self._next_id
            self._next_id += 1
            self.active[tx_id] = ActiveEntry(tx_id, OrderedLock((1, tx_id), self.tracker))
        t = TransactionDescriptor(tx_id, steps, Mode(mode))
        self.recorder.record(tx_id, 1, Kind.BEGIN)
        return t

    def _log(self, t: TransactionDescriptor, step: int, kind: Kind, obj: Hashable, value: int) -> None:
        self.recorder.record(t.tx_id, t.incarnation, kind, obj, value)
        t.ops.append(OpRecord(step, kind, obj, value))

    def read_tx(self, t: TransactionDescriptor, o: Hashable, pc: Optional[int] = None) -> int:
        """Return the value of ``o`` or raise :class:`TxRollback`.

        Only the shared-memory branch is a memop: it checkpoints, registers
        ``t`` as an active reader and is recorded in the history.  Reads
        served from the LDB or SOS are invisible to other transactions.
        """
        if pc is None:
            pc = t.next_step
        if o in t.ldb:
            return t.ldb[o]
        cached = t.sos.get(o)
        if cached is not None:
            return cached.value
        cell = self.memory.get(o)
        if cell is None:
            raise UnknownObjectError(o)
        entry = self.active[t.tx_id]
        with _holding((cell.lock, entry.lock)):
            if entry.status is not Status.RED:
                t.cplog.append(Checkpoint(o, pc, dict(t.ldb), dict(t.sos)))
                value = cell.value
                cell.readers.add(t.tx_id)
                t.sos[o] = SosEntry(value, True, False)
                t.shared_reads += 1
                self._log(t, pc, Kind.READ, o, value)
                return value
        raise TxRollback(self.partially_rollback(t))

    def write_tx(self, t: TransactionDescriptor, o: Hashable, v: int) -> None:
        if o not in self.memory:
            t.ldb[o] = v
            return
        prev = t.sos.get(o)
        t.sos[o] = SosEntry(v, prev.read if prev is not None else False, True)
        self._log(t, t.next_step, Kind.WRITE, o, v)

    def commit_tx(self, t: TransactionDescriptor) -> None:
        """Publish the write set, or roll back if ``t`` has been invalidated."""
        entry = self.active[t.tx_id]
        ws = t.write_set()
        rs = t.read_set()
        # Read-set objects are locked too so t can leave their reader lists
        # atomically with the commit.
        cells = [self.memory[o] for o in sorted(set(ws).union(rs))]
        with _holding(c.lock for c in cells):
            invalidated = {t.tx_id}
            for o in ws:
                invalidated |= self.memory[o].readers
            entries = [self.active[x] for x in sorted(invalidated)]
            with _holding(e.lock for e in entries):
                if entry.status is not Status.RED:
                    self._publish(t, ws, rs)
                    return
        raise TxRollback(self.partially_rollback(t))

    def _publish(self, t: TransactionDescriptor, ws: List[Hashable], rs: List[Hashable]) -> None:
        ws_set = set(ws)
        for o in ws:
            cell = self.memory[o]
            cell.value = t.sos[o].value
            for rt in cell.readers:
                if rt != t.tx_id:
                    other = self.active[rt]
                    other.conflicts |= ws_set
                    other.status = Status.RED
        with self._table_lock:
            del self.active[t.tx_id]
        for o in rs:
            self.memory[o].readers.discard(t.tx_id)
        self.recorder.record(t.tx_id, t.incarnation, Kind.COMMIT)
        t.finished = True

    def partially_rollback(self, t: TransactionDescriptor) -> int:
        """Restore the earliest checkpoint whose victim is a conflict object.

        Closes the current incarnation with a rollback-abort, opens the next
        one and re-emits the retained prefix of reads and writes as its
        events.  Returns the step index to resume from.
        """
        read_objs = t.read_set()
        entry = self.active[t.tx_id]
        locks = [self.memory[o].lock for o in read_objs] + [entry.lock]
        with _holding(locks):
            if entry.status is not Status.RED:
                raise InvariantViolation(f"T{t.tx_id} rolled back while GREEN")
            if t.mode is Mode.FULL:
                cut, cp = 0, Checkpoint(None, 0, {}, {})
            else:
                for cut, cp in enumerate(t.cplog):
                    if cp.victim in entry.conflicts:
                        break
                else:
                    raise InvariantViolation(
                        f"T{t.tx_id}: no checkpoint for conflict objects {sorted(entry.conflicts, key=repr)}")
            for o in read_objs:
                kept = cp.sos.get(o)
                if kept is None or not kept.read:
                    self.memory[o].readers.discard(t.tx_id)
            t.ldb = dict(cp.ldb)
            t.sos = dict(cp.sos)
            del t.cplog[cut:]
            entry.conflicts.clear()
            entry.status = Status.GREEN

            self.recorder.record(t.tx_id, t.incarnation, Kind.ROLLBACK_ABORT)
            t.incarnation += 1
            self.recorder.record(t.tx_id, t.incarnation, Kind.BEGIN)
            retained = [op for op in t.ops if op.step < cp.location]
            t.ops = []
            for op in retained:
                self._log(t, op.step, op.kind, op.obj, op.value)
            t.next_step = cp.location
        return cp.location

    def abort_tx(self, t: TransactionDescriptor) -> None:
        """Explicit abort: drop ``t`` from every reader list and the active table."""
        entry = self.active[t.tx_id]
        read_objs = t.read_set()
        with _holding([self.memory[o].lock for o in read_objs] + [entry.lock]):
            for o in read_objs:
                self.memory[o].readers.discard(t.tx_id)
            with self._table_lock:
                del self.active[t.tx_id]
            self.recorder.record(t.tx_id, t.incarnation, Kind.ABORT)
        t.finished = True


# -- retry driver --------------------------------------------------------------

Gate = Callable[[], ContextManager]


@dataclass
class TxnResult:
    tx_id: int
    incarnations: int
    replayed_ops: int
    rollback_depths: List[int]
    resume_points: List[int]
    shared_reads: int
    reads: List[Tuple[Hashable, int]]
    writes: Dict[Hashable, int]

    @property
    def rollbacks(self) -> int:
        return self.incarnations - 1


class TxnRunner:
    """Drives one transaction body an operation at a time.

    The first :meth:`step` begins the transaction; each later call executes
    the step at ``next_step`` (or the commit once the body is exhausted).
    """

    def __init__(self, g: GlobalWorkspace, body: Sequence[Step], mode: Mode = Mode.PARTIAL):
        self.g = g
        self.body = body
        self.mode = Mode(mode)
        self.t: Optional[TransactionDescriptor] = None
        self.depths: List[int] = []
        self.resumes: List[int] = []
        self.committed = False

    def step(self) -> bool:
        """Perform one operation; returns True once the transaction has committed."""
        g = self.g
        if self.t is None:
            self.t = g.begin_tx(self.body, self.mode)
            return False
        t = self.t
        pc = t.next_step
        try:
            if pc == len(t.body):
                g.commit_tx(t)
                self.committed = True
                return True
            step = t.body[pc]
            if isinstance(step, Read):
                v = g.read_tx(t, step.obj, pc)
                if step.into is not None:
                    g.write_tx(t, step.into, v)
            else:
                g.write_tx(t, step.obj, step.evaluate(t.ldb))
            t.next_step = pc + 1
        except TxRollback as rb:
            self.depths.append(pc - rb.location)
            self.resumes.append(rb.location)
        return False

    def result(self) -> TxnResult:
        t = self.t
        return TxnResult(
            tx_id=t.tx_id,
            incarnations=t.incarnation,
            replayed_ops=sum(self.depths),
            rollback_depths=list(self.depths),
            resume_points=list(self.resumes),
            shared_reads=t.shared_reads,
            reads=[(op.obj, op.value) for op in t.ops if op.kind is Kind.READ],
            writes={o: e.value for o, e in t.sos.items() if e.write},
        )


def run_transaction(g: GlobalWorkspace, body: Sequence[Step], mode: Mode = Mode.PARTIAL,
                    gate: Optional[Gate] = None) -> TxnResult:
    """Run ``body`` to commit, resuming from wherever each rollback points.

    ``gate`` wraps every operation (begin, each step, commit) and lets a
    scheduler decide when the calling thread may proceed.
    """
    gate = gate or contextlib.nullcontext
    runner = TxnRunner(g, body, mode)
    while True:
        with gate():
            if runner.step():
                return runner.result()
