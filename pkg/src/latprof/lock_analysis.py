"""Lock contention statistics and deadlock-risk detection.

Works on per-acquisition records (tid, lock, request/grant/release times)
coming from the simulator or from external tooling via the acquisitions
CSV.  The mutrace text format only carries aggregate rows, so the mutrace
parser yields MutexStats directly and never feeds this module.

The lock-order graph draws an edge A->B each time a thread is granted B
while still holding A; elementary cycles in that graph are the classic
deadlock-risk signal.  "Changed" is defined as the owner-change count:
the number of grants whose tid differs from the previous grant's tid on
the same lock.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

from .graph_core import Graph, detect_cycles
from .parsers import MalformedRow, MutexStats
from .trace_model import Timestamp

NS_PER_MS = 10**6

ACQUISITIONS_HEADER = ["tid", "lock_id", "request_ts", "grant_ts", "release_ts"]


@dataclass(frozen=True)
class LockAcquisition:
    tid: int
    lock_id: int
    request_ts: Timestamp
    grant_ts: Timestamp
    release_ts: Timestamp

    def __post_init__(self) -> None:
        if not self.request_ts <= self.grant_ts <= self.release_ts:
            raise ValueError("acquisition times must satisfy request <= grant <= release")

    def wait_ms(self) -> Fraction:
        return Fraction(self.grant_ts - self.request_ts, NS_PER_MS)


def contention_stats(acquisitions) -> list:
    """Per-lock MutexStats: grant counts, owner changes, and wait times.

    locked counts grants; contended counts grants that had to wait
    (grant_ts > request_ts); total/avg/max are of (grant - request) in
    milliseconds with avg = total / locked, all exact rationals.
    """
    by_lock: dict[int, list] = {}
    for index, acq in enumerate(acquisitions):
        by_lock.setdefault(acq.lock_id, []).append((acq.grant_ts.ns, index, acq))

    stats = []
    for lock_id in sorted(by_lock):
        grants = [acq for _, _, acq in sorted(by_lock[lock_id], key=lambda g: g[:2])]
        locked = len(grants)
        contended = sum(1 for a in grants if a.grant_ts > a.request_ts)
        changed = sum(
            1 for prev, cur in zip(grants, grants[1:]) if prev.tid != cur.tid
        )
        waits = [a.wait_ms() for a in grants]
        total = sum(waits, Fraction(0))
        stats.append(
            MutexStats(
                mutex_id=lock_id,
                locked=locked,
                changed=changed,
                contended=contended,
                total_ms=total,
                avg_ms=total / locked if locked else Fraction(0),
                max_ms=max(waits) if waits else Fraction(0),
                flags="",
            )
        )
    return stats


@dataclass
class LockOrderGraph:
    """Directed held->acquired edges with occurrence counts.

    Re-entrant acquisitions (same lock already held) never create
    self-edges; they are tallied separately per lock.
    """

    edges: dict = field(default_factory=dict)  # (held, acquired) -> count
    nodes: set = field(default_factory=set)
    reentrant: dict = field(default_factory=dict)  # lock_id -> count


def build_lock_order_graph(acquisitions) -> LockOrderGraph:
    """Edge A->B for each grant of B by a thread still holding A.

    Within a thread, grants at equal timestamps keep their input order,
    so program order decides nesting when the stream came from
    instantaneous (uncontended) acquisitions.
    """
    graph = LockOrderGraph()
    by_tid: dict[int, list] = {}
    for index, acq in enumerate(acquisitions):
        graph.nodes.add(acq.lock_id)
        by_tid.setdefault(acq.tid, []).append((acq.grant_ts.ns, index, acq))

    for tid in sorted(by_tid):
        held: list = []
        for grant_ns, _, acq in sorted(by_tid[tid], key=lambda g: g[:2]):
            held = [b for b in held if b.release_ts.ns > grant_ns]
            for b in held:
                if b.lock_id == acq.lock_id:
                    graph.reentrant[acq.lock_id] = graph.reentrant.get(acq.lock_id, 0) + 1
                else:
                    key = (b.lock_id, acq.lock_id)
                    graph.edges[key] = graph.edges.get(key, 0) + 1
            held.append(acq)
    return graph


def detect_deadlock_risk(graph: LockOrderGraph, max_len: int = 8) -> list:
    """All elementary lock-order cycles up to max_len, canonical rotation.

    An empty list means no deadlock risk was detected.
    """
    g = Graph(directed=True)
    for node in graph.nodes:
        g.add_node(node)
    for (held, acquired), count in graph.edges.items():
        g.add_edge(held, acquired, count)
    return detect_cycles(g, max_len=max_len)


# ---------------------------------------------------------------------------
# acquisitions CSV interchange


def read_acquisitions_csv(text: str) -> list:
    """Parse ``tid,lock_id,request_ts,grant_ts,release_ts`` (seconds)."""
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row]
    if not rows or rows[0] != ACQUISITIONS_HEADER:
        raise MalformedRow(1, ",".join(rows[0]) if rows else "",
                           f"expected header {','.join(ACQUISITIONS_HEADER)}")
    acquisitions = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != 5:
            raise MalformedRow(lineno, ",".join(row), "expected 5 columns")
        try:
            acquisitions.append(
                LockAcquisition(
                    tid=int(row[0]),
                    lock_id=int(row[1]),
                    request_ts=Timestamp.parse(row[2]),
                    grant_ts=Timestamp.parse(row[3]),
                    release_ts=Timestamp.parse(row[4]),
                )
            )
        except ValueError as exc:
            raise MalformedRow(lineno, ",".join(row), str(exc)) from exc
    return acquisitions


def write_acquisitions_csv(acquisitions) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ACQUISITIONS_HEADER)
    for acq in acquisitions:
        writer.writerow([
            acq.tid,
            acq.lock_id,
            acq.request_ts.format(),
            acq.grant_ts.format(),
            acq.release_ts.format(),
        ])
    return out.getvalue()
