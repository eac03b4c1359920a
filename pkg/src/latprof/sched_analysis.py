"""Reconstruct per-thread scheduler timelines and attribute off-CPU time.

A per-tid state machine pairs sched_switch/sched_wakeup events directly:
a switch-out closes the thread's Running interval and opens Sleeping (or
Runnable when it left in state R), a wakeup opens Runnable, a switch-in
opens Running.  Contradictory transitions (e.g. a wakeup of a thread
already running) are tallied as anomalies and ignored.  Sleeping and
Runnable intervals become WaitIntervals; the wait reason comes from the
opening switch's prev_state, its call stack, the thread's pending syscall,
and nearby block/network events.

Events are processed in a canonical order: timestamp, then an event-kind
rank (wakeups, then everything else, then switch-ins, then switch-outs),
then cpu and event name, keeping input order for remaining ties.  The
kind rank is what makes same-instant wakeup/switch sequences land in the
only order the state machine can accept, so reshuffling equal-timestamp
input never changes totals.
"""

from __future__ import annotations

import enum
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from fractions import Fraction

from .trace_model import (
    NS_PER_SEC,
    Timestamp,
    WaitInterval,
    WaitKind,
    WaitReason,
    stack_signature,
)

DEFAULT_LOCK_SYMBOLS = frozenset(
    {
        "futex_wait",
        "futex_wait_queue_me",
        "pthread_mutex_lock",
        "pthread_cond_wait",
        "pthread_join",
        "sem_wait",
    }
)

DEFAULT_LOOKBACK_NS = 1_000_000  # 1 ms block/network correlation window

_BLOCK_SYSCALLS = frozenset({"read", "write", "fsync", "fdatasync"})
_NET_SYSCALLS = frozenset(
    {"poll", "select", "epoll_wait", "recvfrom", "recvmsg", "accept", "connect"}
)
_TIMER_SYSCALLS = frozenset({"nanosleep", "clock_nanosleep"})

_SLEEP_TOKENS = frozenset({"S", "D", "T", "t", "X", "Z", "I"})


@dataclass(frozen=True)
class AnalysisConfig:
    lock_symbols: frozenset = DEFAULT_LOCK_SYMBOLS
    lookback_ns: int = DEFAULT_LOOKBACK_NS


class ThreadState(enum.Enum):
    RUNNING = "running"
    RUNNABLE = "runnable"
    SLEEPING = "sleeping"
    UNKNOWN = "unknown"


@dataclass
class TimelineInterval:
    start: Timestamp
    end: Timestamp
    state: ThreadState
    stack: tuple = ()
    prev_state: str | None = None  # prev_state of the switch that opened it
    open_index: int = -1  # canonical event index that opened the interval
    truncated: bool = False


@dataclass
class ThreadTimeline:
    tid: int
    comm: str = ""
    intervals: list = field(default_factory=list)

    def total_ns(self) -> int:
        return sum(iv.end - iv.start for iv in self.intervals)


@dataclass
class Timelines:
    by_tid: dict = field(default_factory=dict)
    anomalies: int = 0
    origin: Timestamp | None = None
    end: Timestamp | None = None


def _kind_rank(event) -> int:
    if event.event_class != "sched":
        return 1
    name = event.event_name
    if name.startswith("sched_wakeup") or name == "sched_waking":
        return 0
    if name == "sched_switch":
        next_pid = event.args.get("next_pid", "")
        if next_pid.isdigit() and int(next_pid) > 0:
            return 2  # switches a thread in
        return 3  # pure switch-out (to idle)
    return 1


def canonical_sort(events) -> list:
    """The documented deterministic event order shared by all analyses."""
    return [
        ev
        for _, _, _, _, _, ev in sorted(
            (ev.ts.ns, _kind_rank(ev), ev.cpu, ev.event, i, ev)
            for i, ev in enumerate(events)
        )
    ]


def _int_arg(event, key) -> int | None:
    value = event.args.get(key, "")
    return int(value) if value.isdigit() else None


class _ThreadMachine:
    def __init__(self, tid: int, origin: Timestamp):
        self.timeline = ThreadTimeline(tid=tid)
        self.state = ThreadState.UNKNOWN
        self.since = origin
        self.stack = ()
        self.prev_state = None
        self.open_index = -1

    def transition(self, ts, new_state, index, stack=(), prev_state=None):
        if ts > self.since or self.state is not ThreadState.UNKNOWN:
            self.timeline.intervals.append(
                TimelineInterval(
                    start=self.since,
                    end=ts,
                    state=self.state,
                    stack=self.stack,
                    prev_state=self.prev_state,
                    open_index=self.open_index,
                )
            )
        self.state = new_state
        self.since = ts
        self.stack = stack
        self.prev_state = prev_state
        self.open_index = index

    def finish(self, end: Timestamp):
        self.timeline.intervals.append(
            TimelineInterval(
                start=self.since,
                end=end,
                state=self.state,
                stack=self.stack,
                prev_state=self.prev_state,
                open_index=self.open_index,
                truncated=True,
            )
        )


def build_timelines(events) -> Timelines:
    """Apply the per-tid scheduler state machine in canonical event order.

    Every tid sighted anywhere in the trace (header or sched args) gets a
    timeline starting in Unknown at the trace origin; tid 0 (the idle task)
    is never tracked.  Open intervals are closed at the last event
    timestamp and flagged truncated, so each timeline tiles the full
    observation window exactly.
    """
    ordered = canonical_sort(events)
    result = Timelines()
    if not ordered:
        return result
    origin = ordered[0].ts
    end = ordered[-1].ts
    result.origin = origin
    result.end = end

    machines: dict[int, _ThreadMachine] = {}

    def machine(tid: int) -> _ThreadMachine:
        if tid not in machines:
            machines[tid] = _ThreadMachine(tid, origin)
        return machines[tid]

    def note_comm(tid, comm):
        if comm:
            machine(tid).timeline.comm = comm

    for index, ev in enumerate(ordered):
        if ev.tid > 0:
            note_comm(ev.tid, ev.comm)
        if ev.event_class != "sched":
            continue
        name = ev.event_name
        if name == "sched_switch":
            prev = _int_arg(ev, "prev_pid")
            nxt = _int_arg(ev, "next_pid")
            if prev is not None and prev > 0:
                note_comm(prev, ev.args.get("prev_comm", ""))
                m = machine(prev)
                if m.state in (ThreadState.RUNNING, ThreadState.UNKNOWN):
                    token = ev.args.get("prev_state", "").rstrip("+")
                    if token == "R":
                        new_state = ThreadState.RUNNABLE
                    elif token in _SLEEP_TOKENS:
                        new_state = ThreadState.SLEEPING
                    else:
                        new_state = ThreadState.SLEEPING
                        result.anomalies += 1
                    m.transition(ev.ts, new_state, index,
                                 stack=ev.stack, prev_state=ev.args.get("prev_state"))
                else:
                    result.anomalies += 1
            if nxt is not None and nxt > 0:
                note_comm(nxt, ev.args.get("next_comm", ""))
                m = machine(nxt)
                if m.state in (ThreadState.RUNNABLE, ThreadState.UNKNOWN):
                    m.transition(ev.ts, ThreadState.RUNNING, index)
                else:
                    result.anomalies += 1
        elif name.startswith("sched_wakeup") or name == "sched_waking":
            pid = _int_arg(ev, "pid")
            if pid is not None and pid > 0:
                note_comm(pid, ev.args.get("comm", ""))
                m = machine(pid)
                if m.state in (ThreadState.SLEEPING, ThreadState.UNKNOWN):
                    m.transition(ev.ts, ThreadState.RUNNABLE, index)
                else:
                    result.anomalies += 1

    for tid, m in machines.items():
        m.finish(end)
        result.by_tid[tid] = m.timeline
    return result


def _pending_name(event_name: str) -> tuple[str, str] | None:
    if event_name.startswith("sys_enter_"):
        return ("enter", event_name[len("sys_enter_"):])
    if event_name.startswith("sys_exit_"):
        return ("exit", event_name[len("sys_exit_"):])
    return None


def classify_wait(prev_state, stack, pending_syscall, has_block_event,
                  has_net_event, lock_symbols=DEFAULT_LOCK_SYMBOLS) -> WaitReason:
    """First matching rule wins: lock, block I/O, network, timer, unknown."""
    if pending_syscall == "futex" or any(
        f.symbol in lock_symbols for f in stack if f.symbol
    ):
        return WaitReason.LOCK
    if (prev_state and "D" in prev_state) or pending_syscall in _BLOCK_SYSCALLS \
            or has_block_event:
        return WaitReason.BLOCK_IO
    if pending_syscall in _NET_SYSCALLS or has_net_event:
        return WaitReason.NETWORK
    if pending_syscall in _TIMER_SYSCALLS:
        return WaitReason.TIMER
    return WaitReason.UNKNOWN


def attribute_offcpu(timelines: Timelines, events, config: AnalysisConfig = None) -> list:
    """One WaitInterval per Sleeping/Runnable timeline interval.

    `events` must be the list the timelines were built from; both passes
    share the canonical ordering, which is how interval open positions
    line up with the pending-syscall replay.
    """
    if config is None:
        config = AnalysisConfig()
    ordered = canonical_sort(events)

    syscall_changes: dict[int, list] = {}  # tid -> [(index, name or None)]
    block_ts: dict[int, list] = {}
    net_ts: dict[int, list] = {}
    for index, ev in enumerate(ordered):
        cls = ev.event_class
        if cls == "syscalls":
            change = _pending_name(ev.event_name)
            if change is not None:
                kind, name = change
                syscall_changes.setdefault(ev.tid, []).append(
                    (index, name if kind == "enter" else None)
                )
        elif cls == "block":
            block_ts.setdefault(ev.tid, []).append(ev.ts.ns)
        elif cls in ("net", "sock", "skb"):
            net_ts.setdefault(ev.tid, []).append(ev.ts.ns)

    def pending_at(tid, open_index):
        changes = syscall_changes.get(tid)
        if not changes or open_index < 0:
            return None
        lo = bisect_left(changes, open_index, key=lambda c: c[0])
        return changes[lo - 1][1] if lo > 0 else None

    def any_in_window(table, tid, start_ns):
        stamps = table.get(tid)
        if not stamps:
            return False
        lo = bisect_left(stamps, start_ns - config.lookback_ns)
        hi = bisect_right(stamps, start_ns)
        return hi > lo

    waits = []
    for tid in sorted(timelines.by_tid):
        for iv in timelines.by_tid[tid].intervals:
            if iv.state is ThreadState.RUNNABLE:
                waits.append(
                    WaitInterval(tid, iv.start, iv.end, WaitKind.RUNNABLE,
                                 WaitReason.SCHEDULER_DELAY, iv.stack, iv.truncated)
                )
            elif iv.state is ThreadState.SLEEPING:
                reason = classify_wait(
                    iv.prev_state,
                    iv.stack,
                    pending_at(tid, iv.open_index),
                    any_in_window(block_ts, tid, iv.start.ns),
                    any_in_window(net_ts, tid, iv.start.ns),
                    config.lock_symbols,
                )
                waits.append(
                    WaitInterval(tid, iv.start, iv.end, WaitKind.BLOCKED,
                                 reason, iv.stack, iv.truncated)
                )
    return waits


def _log2_bucket_us(dur_ns: int) -> int:
    """k with 2^k <= dur_ns/1000 < 2^(k+1), exact integer arithmetic."""
    if dur_ns >= 1000:
        return (dur_ns // 1000).bit_length() - 1
    k = 0
    value = dur_ns
    while value < 1000:
        value <<= 1
        k -= 1
    return k


@dataclass
class WaitSummary:
    """Wait totals per (tid, reason) and per stack signature, plus a log2
    duration histogram (bucket k covers [2^k, 2^(k+1)) microseconds;
    zero-length intervals are excluded from the histogram)."""

    by_tid_reason: dict = field(default_factory=dict)  # (tid, WaitReason) -> ns
    by_stack: dict = field(default_factory=dict)  # signature -> [ns, count]
    histogram: dict = field(default_factory=dict)  # bucket k -> count

    def total_ns(self) -> int:
        return sum(self.by_tid_reason.values())

    def tid_total_ns(self, tid: int) -> int:
        return sum(ns for (t, _), ns in self.by_tid_reason.items() if t == tid)

    def seconds(self, key) -> Fraction:
        return Fraction(self.by_tid_reason.get(key, 0), NS_PER_SEC)

    def merge(self, other: "WaitSummary") -> "WaitSummary":
        out = WaitSummary()
        for src in (self, other):
            for key, ns in src.by_tid_reason.items():
                out.by_tid_reason[key] = out.by_tid_reason.get(key, 0) + ns
            for sig, (ns, count) in src.by_stack.items():
                cur = out.by_stack.setdefault(sig, [0, 0])
                cur[0] += ns
                cur[1] += count
            for bucket, count in src.histogram.items():
                out.histogram[bucket] = out.histogram.get(bucket, 0) + count
        return out


def summarize_waits(intervals) -> WaitSummary:
    summary = WaitSummary()
    for w in intervals:
        ns = w.end - w.start
        key = (w.tid, w.reason)
        summary.by_tid_reason[key] = summary.by_tid_reason.get(key, 0) + ns
        sig = stack_signature(w.stack)
        cur = summary.by_stack.setdefault(sig, [0, 0])
        cur[0] += ns
        cur[1] += 1
        if ns > 0:
            bucket = _log2_bucket_us(ns)
            summary.histogram[bucket] = summary.histogram.get(bucket, 0) + 1
    return summary
