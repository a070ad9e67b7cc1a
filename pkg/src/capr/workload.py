"""Synthetic concurrent workloads for the engine, plus a scripted scheduler.

Three body shapes:

* ``counter``: read k objects, then write each back incremented;
* ``long-reader``: read many cold objects with the hot object 0 read late,
  then increment the hot object;
* ``random``: an interleaved mix of reads and writes whose written values
  depend on everything read so far.
"""

from __future__ import annotations

import contextlib
import random
import threading
import time
from dataclasses import dataclass, replace
from typing import Dict, Hashable, List, Sequence

import numpy as np

from .core import (GlobalWorkspace, Mode, Read, Step, TxnResult, Write,
                   normalize_body, run_transaction)
from .history import Event, HistoryRecorder, dump_trace

SHAPES = ("counter", "long-reader", "random")
VALUE_MOD = 2 ** 31


class WatchdogTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class WorkloadConfig:
    threads: int = 2
    shared_objects: int = 8
    txn_length: int = 8
    txns_per_thread: int = 4
    mode: Mode = Mode.PARTIAL
    rng_seed: int = 0
    shape: str = "random"
    # chance of yielding the GIL before each operation; widens interleavings
    yield_prob: float = 0.3
    watchdog: float = 60.0

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.txns_per_thread < 0:
            raise ValueError("txns_per_thread must be >= 0")
        if self.shared_objects < 1:
            raise ValueError("need at least one shared object")
        if self.txn_length < 1:
            raise ValueError("txn_length must be >= 1")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if not 0.0 <= self.yield_prob <= 1.0:
            raise ValueError("yield_prob must lie in [0, 1]")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        if self.shape == "long-reader" and self.shared_objects < 2:
            raise ValueError("long-reader needs a hot object and at least one cold one")
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclass
class RunMetrics:
    committed_txns: int = 0
    total_incarnations: int = 0
    rollbacks: int = 0
    replayed_ops: int = 0
    wall_time: float = 0.0
    mean_rollback_depth: float = 0.0

    def report(self) -> str:
        return (
            f"committed_txns={self.committed_txns}\n"
            f"total_incarnations={self.total_incarnations}\n"
            f"rollbacks={self.rollbacks}\n"
            f"replayed_ops={self.replayed_ops}\n"
            f"wall_time={self.wall_time:.6f}\n"
            f"mean_rollback_depth={self.mean_rollback_depth:.6f}\n"
        )


@dataclass
class WorkloadRun:
    config: WorkloadConfig
    events: List[Event]
    metrics: RunMetrics
    bodies: Dict[int, List[Step]]
    results: List[TxnResult]
    final_state: Dict[int, int]
    lock_violations: int = 0
    lock_acquisitions: int = 0

    def trace(self) -> str:
        return dump_trace(self.events)


# -- body generators -----------------------------------------------------------

def _sum_locals(names: Sequence[str], salt: int):
    def value(ldb):
        return (sum(ldb[n] for n in names) + salt) % VALUE_MOD
    return value


def _incremented(name: str):
    return lambda ldb: (ldb[name] + 1) % VALUE_MOD


def counter_body(objects: Sequence[int]) -> List[Step]:
    body: List[Step] = [Read(o, f"v{i}") for i, o in enumerate(objects)]
    body += [Write(o, _incremented(f"v{i}")) for i, o in enumerate(objects)]
    return body


def long_reader_body(cold: Sequence[int], hot: int = 0) -> List[Step]:
    """Cold reads with the hot read three quarters of the way in, then one write."""
    body: List[Step] = [Read(o, f"c{i}") for i, o in enumerate(cold)]
    body.insert(len(cold) * 3 // 4, Read(hot, "hot"))
    body.append(Write(hot, _incremented("hot")))
    return body


def make_body(cfg: WorkloadConfig, rng: np.random.Generator) -> List[Step]:
    n, length = cfg.shared_objects, cfg.txn_length
    if cfg.shape == "counter":
        k = max(1, min(n, length // 2))
        objs = sorted(int(o) for o in rng.choice(n, size=k, replace=False))
        return counter_body(objs)
    if cfg.shape == "long-reader":
        cold = [int(o) for o in rng.integers(1, n, size=max(0, length - 2))]
        return long_reader_body(cold)
    body: List[Step] = []
    names: List[str] = []
    for i in range(length):
        obj = int(rng.integers(n))
        if not names or rng.random() < 0.6:
            name = f"v{i}"
            body.append(Read(obj, name))
            names.append(name)
        else:
            body.append(Write(obj, _sum_locals(tuple(names), i + 1)))
    return body


def execute_sequentially(body: Sequence[Step], state: Dict[int, int]) -> None:
    """Run ``body`` alone against ``state`` (mutated in place): the sequential
    reference behaviour the engine's committed results must match."""
    ldb: Dict[Hashable, int] = {}
    buffered: Dict[int, int] = {}
    for step in normalize_body(body):
        if isinstance(step, Read):
            if step.obj in buffered:
                v = buffered[step.obj]
            else:
                v = state.get(step.obj, 0)
            if step.into is not None:
                ldb[step.into] = v
        else:
            buffered[step.obj] = step.evaluate(ldb)
    state.update(buffered)


# -- gating ---------------------------------------------------------------------

class _Yielder:
    """Gate that sometimes gives up the GIL before an operation."""

    def __init__(self, prob: float, rng: random.Random):
        self.prob = prob
        self.rng = rng

    def __call__(self):
        if self.prob and self.rng.random() < self.prob:
            time.sleep(1e-6)  # sleep(0) returns without handing over the GIL
        return contextlib.nullcontext()


class ScriptedScheduler:
    """Barrier-stepped schedule over named worker threads.

    ``order`` lists, one entry per operation, which worker may run next.
    Entries for workers that have finished are skipped; once the order is
    exhausted every worker runs freely.
    """

    def __init__(self, order: Sequence[Hashable], timeout: float = 10.0):
        self.order = list(order)
        self.timeout = timeout
        self._pos = 0
        self._finished: set = set()
        self._cond = threading.Condition()
        self.log: List[Hashable] = []

    def _skip_finished(self) -> None:
        while self._pos < len(self.order) and self.order[self._pos] in self._finished:
            self._pos += 1

    @contextlib.contextmanager
    def turn(self, who: Hashable):
        with self._cond:
            ok = self._cond.wait_for(
                lambda: self._pos >= len(self.order) or self.order[self._pos] == who, self.timeout)
            if not ok:
                raise WatchdogTimeout(f"worker {who!r} never got its turn at position {self._pos}")
        try:
            yield
        finally:
            with self._cond:
                self.log.append(who)
                if self._pos < len(self.order):
                    self._pos += 1
                    self._skip_finished()
                self._cond.notify_all()

    def gate(self, who: Hashable):
        return lambda: self.turn(who)

    def finish(self, who: Hashable) -> None:
        with self._cond:
            self._finished.add(who)
            self._skip_finished()
            self._cond.notify_all()


def run_scripted(g: GlobalWorkspace, programs: Dict[Hashable, Sequence[Sequence[Step]]],
                 order: Sequence[Hashable], mode: Mode = Mode.PARTIAL,
                 timeout: float = 10.0) -> Dict[Hashable, List[TxnResult]]:
    """Run each worker's bodies in its own thread, stepping per ``order``."""
    sched = ScriptedScheduler(order, timeout)
    results: Dict[Hashable, List[TxnResult]] = {w: [] for w in programs}
    errors: List[BaseException] = []

    def worker(who):
        try:
            for body in programs[who]:
                results[who].append(run_transaction(g, body, mode, sched.gate(who)))
        except BaseException as exc:  # surfaced to the caller after join
            errors.append(exc)
        finally:
            sched.finish(who)

    threads = [threading.Thread(target=worker, args=(w,), daemon=True) for w in programs]
    for th in threads:
        th.start()
    for th in threads:
        th.join(timeout * 4)
        if th.is_alive():
            raise WatchdogTimeout("scripted worker did not finish")
    if errors:
        raise errors[0]
    return results


# -- workload driver ------------------------------------------------------------

def thread_generators(seed: int, threads: int) -> List[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(threads)]


def run_workload(cfg: WorkloadConfig, debug: bool = True) -> WorkloadRun:
    recorder = HistoryRecorder()
    g = GlobalWorkspace(cfg.shared_objects, recorder, debug=debug)
    gens = thread_generators(cfg.rng_seed, cfg.threads)
    programs = [[make_body(cfg, rng) for _ in range(cfg.txns_per_thread)] for rng in gens]
    results: List[List[TxnResult]] = [[] for _ in range(cfg.threads)]
    errors: List[BaseException] = []
    start_line = threading.Barrier(cfg.threads)

    def worker(i: int) -> None:
        gate = _Yielder(cfg.yield_prob, random.Random(cfg.rng_seed * 1000003 + i))
        try:
            start_line.wait(cfg.watchdog)
            for body in programs[i]:
                results[i].append(run_transaction(g, body, cfg.mode, gate))
        except BaseException as exc:
            errors.append(exc)

    start = time.perf_counter()
    if cfg.threads == 1:
        worker(0)
    else:
        threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(cfg.threads)]
        for th in threads:
            th.start()
        deadline = start + cfg.watchdog
        for th in threads:
            th.join(max(0.0, deadline - time.perf_counter()))
            if th.is_alive():
                raise WatchdogTimeout(f"workload seed={cfg.rng_seed} exceeded {cfg.watchdog}s")
    wall = time.perf_counter() - start
    if errors:
        raise errors[0]

    flat = [r for per in results for r in per]
    bodies = {}
    for per_thread, per_results in zip(programs, results):
        for body, res in zip(per_thread, per_results):
            bodies[res.tx_id] = body
    depths = [d for r in flat for d in r.rollback_depths]
    metrics = RunMetrics(
        committed_txns=len(flat),
        total_incarnations=sum(r.incarnations for r in flat),
        rollbacks=len(depths),
        replayed_ops=sum(depths),
        wall_time=wall,
        mean_rollback_depth=(sum(depths) / len(depths)) if depths else 0.0,
    )
    tracker = g.tracker
    return WorkloadRun(
        config=cfg,
        events=recorder.events,
        metrics=metrics,
        bodies=bodies,
        results=flat,
        final_state=g.snapshot(),
        lock_violations=len(tracker.violations) if tracker else 0,
        lock_acquisitions=tracker.acquisitions if tracker else 0,
    )


@dataclass
class ComparisonReport:
    partial: RunMetrics
    full: RunMetrics

    @property
    def replay_ratio(self) -> float:
        if self.full.replayed_ops == 0:
            return 1.0 if self.partial.replayed_ops == 0 else float("inf")
        return self.partial.replayed_ops / self.full.replayed_ops

    @property
    def time_ratio(self) -> float:
        return self.partial.wall_time / self.full.wall_time if self.full.wall_time else float("nan")

    def report(self) -> str:
        return (
            f"partial.replayed_ops={self.partial.replayed_ops}\n"
            f"partial.rollbacks={self.partial.rollbacks}\n"
            f"partial.wall_time={self.partial.wall_time:.6f}\n"
            f"full.replayed_ops={self.full.replayed_ops}\n"
            f"full.rollbacks={self.full.rollbacks}\n"
            f"full.wall_time={self.full.wall_time:.6f}\n"
            f"replayed_ops_ratio={self.replay_ratio:.6f}\n"
            f"wall_time_ratio={self.time_ratio:.6f}\n"
        )


def compare_modes(cfg: WorkloadConfig) -> ComparisonReport:
    partial = run_workload(replace(cfg, mode=Mode.PARTIAL)).metrics
    full = run_workload(replace(cfg, mode=Mode.FULL)).metrics
    return ComparisonReport(partial, full)
