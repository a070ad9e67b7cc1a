"""Software transactional memory with checkpointing and partial rollback,
plus a conflict-opacity verifier for the histories it records."""

from .core import (COMMIT, Commit, GlobalWorkspace, InvariantViolation, Mode, Read,
                   TransactionDescriptor, TxRollback, UnknownObjectError, Write,
                   run_transaction)
from .history import (Event, History, HistoryRecorder, Kind, TraceError, Txn,
                      complete, parse_notation, read_trace, split_incarnations,
                      write_trace)
from .verify import (Verdict, brute_force_opaque, build_conflict_graph, check_co_opaque,
                     check_legal, check_sfm_ordering, check_valid)
from .workload import WorkloadConfig, compare_modes, run_workload

__all__ = [
    "COMMIT", "Commit", "GlobalWorkspace", "InvariantViolation", "Mode", "Read",
    "TransactionDescriptor", "TxRollback", "UnknownObjectError", "Write", "run_transaction",
    "Event", "History", "HistoryRecorder", "Kind", "TraceError", "Txn", "complete",
    "parse_notation", "read_trace", "split_incarnations", "write_trace",
    "Verdict", "brute_force_opaque", "build_conflict_graph", "check_co_opaque",
    "check_legal", "check_sfm_ordering", "check_valid",
    "WorkloadConfig", "compare_modes", "run_workload",
]
