"""Crash-point instrumentation for fault-injection tests.

``maybe_kill(label)`` is a no-op unless test environment variables are
set: ``TABLEVAULT_TRACE_POINTS=<file>`` appends every label reached (used
to enumerate kill points), and ``TABLEVAULT_KILL_AT=<label>:<n>`` makes
the process hard-exit (``os._exit``) on the n-th occurrence of that
label, simulating a crash with no interpreter cleanup.
"""

from __future__ import annotations

import os
import threading

KILL_EXIT_CODE = 99

_lock = threading.Lock()
_counts: dict[str, int] = {}

_trace_file = os.environ.get("TABLEVAULT_TRACE_POINTS")
_kill_spec = os.environ.get("TABLEVAULT_KILL_AT")
if _kill_spec:
    _kill_label, _, _kill_n = _kill_spec.rpartition(":")
    _kill_count = int(_kill_n)
else:
    _kill_label, _kill_count = None, 0


def maybe_kill(label: str) -> None:
    if _trace_file is None and _kill_label is None:
        return
    with _lock:
        _counts[label] = _counts.get(label, 0) + 1
        hits = _counts[label]
        if _trace_file is not None:
            with open(_trace_file, "a", encoding="utf-8") as fh:
                fh.write(label + "\n")
    if _kill_label == label and hits == _kill_count:
        os._exit(KILL_EXIT_CODE)
