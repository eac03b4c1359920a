"""Offline latency profiling toolkit.

Parses textual traces from standard Unix profilers (perf script, gprof,
oprofile, mutrace, strace), attributes off-CPU wait time to call stacks and
wait-reason classes, aggregates flat profiles and lock contention statistics,
detects deadlock risk from lock-order cycles, and exports dashboard-ready
data files.  A bundled producer-consumer discrete-event simulator provides
ground-truth traces for verification.
"""

__version__ = "0.1.0"
