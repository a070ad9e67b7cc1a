"""Reference computations kept deliberately naive and independent of capr.verify."""

from hypothesis import strategies as st

from capr.history import Event, Kind, split_incarnations


def naive_edges(h):
    """Conflict-graph edges by checking every pair of events against the
    textbook definitions.  Works on the completed history."""
    ev = h.events
    by_txn = {}
    for i, e in enumerate(ev):
        by_txn.setdefault((e.tx, e.inc), []).append((i, e))
    status = {}
    writes = {}
    for t, lst in by_txn.items():
        kinds = [e.kind for _, e in lst]
        if Kind.COMMIT in kinds:
            status[t] = "c"
        elif any(k in (Kind.ABORT, Kind.ROLLBACK_ABORT) for k in kinds):
            status[t] = "a"
        else:
            status[t] = "live"
        writes[t] = {e.obj for _, e in lst if e.kind is Kind.WRITE}

    def name(t):
        return "T0" if t == (0, 0) else f"T{t[0]}.{t[1]}"

    edges = {}

    def add(u, v, label):
        if u != v:
            edges.setdefault((name(u), name(v)), set()).add(label)

    for t, lst in by_txn.items():
        add((0, 0), t, "RT")
        if any(e.kind is Kind.READ for _, e in lst):
            add((0, 0), t, "w-r")
        if status[t] == "c" and writes[t]:
            add((0, 0), t, "w-w")
    for u, ul in by_txn.items():
        for v, vl in by_txn.items():
            if u == v:
                continue
            if status[u] != "live" and ul[-1][0] < vl[0][0]:
                add(u, v, "RT")
            for i, p in ul:
                for j, q in vl:
                    if i >= j:
                        continue
                    if p.kind is Kind.COMMIT and q.kind is Kind.COMMIT and writes[u] & writes[v]:
                        add(u, v, "w-w")
                    if p.kind is Kind.COMMIT and q.kind is Kind.READ and q.obj in writes[u]:
                        add(u, v, "w-r")
                    if p.kind is Kind.READ and q.kind is Kind.COMMIT and p.obj in writes[v]:
                        add(u, v, "r-w")
    return edges


@st.composite
def histories(draw, max_txns=4, objects=2, values=(0, 1, 2)):
    """Well-formed single-incarnation histories with arbitrary interleaving."""
    n = draw(st.integers(1, max_txns))
    programs = []
    for tx in range(1, n + 1):
        ops = draw(st.lists(
            st.tuples(st.sampled_from([Kind.READ, Kind.WRITE]),
                      st.integers(0, objects - 1), st.sampled_from(values)),
            min_size=1, max_size=3))
        end = draw(st.sampled_from([Kind.COMMIT, Kind.ABORT, None]))
        seq = [(Kind.BEGIN, None, None)] + list(ops)
        if end is not None:
            seq.append((end, None, None))
        programs.append([(tx, k, o, v) for k, o, v in seq])
    cursors = [0] * n
    events = []
    while any(c < len(p) for c, p in zip(cursors, programs)):
        ready = [i for i in range(n) if cursors[i] < len(programs[i])]
        i = draw(st.sampled_from(ready))
        tx, kind, obj, val = programs[i][cursors[i]]
        cursors[i] += 1
        events.append(Event(len(events), tx, 1, kind, obj, val))
    return split_incarnations(events)


# Handcrafted histories that are not opaque at all; each must be rejected by
# both the graph check and the enumeration oracle.
NON_OPAQUE = {
    "write-skew": "r1(x,0) r2(y,0) w1(y,1) w2(x,1) c1 c2",
    "lost-update": "r1(x,0) r2(x,0) w1(x,1) c1 w2(x,2) c2",
    "stale-read-after-commit": "w1(x,1) c1 r2(x,0) c2",
    "phantom-value": "r1(x,7) c1",
    "read-from-aborted": "w1(x,5) a1 r2(x,5) c2",
    "dirty-read": "w1(x,5) r2(x,5) c1 c2",
    "non-repeatable-read": "r1(x,0) w2(x,1) c2 r1(x,1)",
    "inconsistent-snapshot-aborted": "r1(x,0) w2(x,1) w2(y,1) c2 r1(y,1) a1",
    "three-way-antidependency": "r1(x,0) r2(y,0) r3(z,0) w1(y,1) c1 w2(z,1) c2 w3(x,1) c3",
    "real-time-inversion": "r1(x,0) w2(x,1) c2 w3(y,1) c3 r1(y,1) c1",
    "sequential-stale-read": "w1(x,1) c1 w2(x,2) c2 r3(x,1) c3",
}

# Opaque (T2 may be serialized before T1) yet not conflict opaque: w-w order
# fixes T1 before T2 and T3's read then sees the wrong writer.
OPAQUE_NOT_CO_OPAQUE = "w1(x,1) w2(x,2) c1 c2 r3(x,1) c3"
