"""Scripted two-thread schedules with known outcomes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Set, Tuple

from .core import GlobalWorkspace, Mode, Read, Write
from .history import History, Kind, split_incarnations
from .verify import RT, RW, WR, WW, Verdict, check_co_opaque
from .workload import run_scripted

X, Y, Z = 0, 1, 2

# T1 reads x, y, z and writes x; T2 reads x and writes y = 5.
H1_T1 = [Read(X, "x"), Read(Y, "y"), Read(Z, "z"), Write(X, 5)]
H1_T2 = [Read(X, "x"), Write(Y, 5)]
# b1 r1(x) r1(y) b2 r2(x) r1(z) w2(y,5) c2 w1(x,5) then T1's commit attempt
H1_ORDER = [1, 1, 1, 2, 2, 1, 2, 2, 1, 1]

H2_EDGES: Dict[Tuple[str, str], Set[str]] = {
    ("T0", "T1.1"): {RT, WR},
    ("T0", "T2.1"): {RT, WR, WW},
    ("T0", "T1.2"): {RT, WR, WW},
    ("T1.1", "T2.1"): {RW},
    ("T1.1", "T1.2"): {RT, RW},
    ("T2.1", "T1.2"): {RT, WR, RW},
}


@dataclass
class H1Outcome:
    workspace: GlobalWorkspace
    history: History
    verdict: Verdict
    rollback_depths: List[int]
    resume_step: int
    second_read_of_y: int

    def edge_names(self) -> Dict[Tuple[str, str], Set[str]]:
        return {(str(u), str(v)): labels for (u, v), labels in self.verdict.graph.edges.items()}


def run_h1(mode: Mode = Mode.PARTIAL, debug: bool = True) -> H1Outcome:
    g = GlobalWorkspace(3, debug=debug)
    results = run_scripted(g, {1: [H1_T1], 2: [H1_T2]}, H1_ORDER, mode)
    (t1,) = results[1]
    history = split_incarnations(g.recorder.events)
    y_reads = [e.value for e in history.events if e.tx == 1 and e.inc == 2 and e.obj == Y and e.kind is Kind.READ]
    return H1Outcome(
        workspace=g,
        history=history,
        verdict=check_co_opaque(history),
        rollback_depths=t1.rollback_depths,
        resume_step=t1.resume_points[0] if t1.resume_points else -1,
        second_read_of_y=y_reads[-1] if y_reads else -1,
    )


def selftest() -> List[str]:
    """Run the H1 schedule and return a list of failed expectations."""
    out = run_h1()
    problems = []
    if out.rollback_depths != [3]:
        problems.append(f"expected one rollback discarding 3 steps, got {out.rollback_depths}")
    if out.resume_step != 1:
        problems.append(f"expected resume at the read of y (step 1), got step {out.resume_step}")
    if out.second_read_of_y != 5:
        problems.append(f"second incarnation read y={out.second_read_of_y}, expected 5")
    if not out.verdict.opaque:
        problems.append("H2 judged not opaque")
    elif out.edge_names() != H2_EDGES:
        problems.append(f"conflict graph mismatch: {sorted(out.edge_names().items())}")
    if out.workspace.tracker.violations:
        problems.append(f"lock order violations: {out.workspace.tracker.violations}")
    return problems
