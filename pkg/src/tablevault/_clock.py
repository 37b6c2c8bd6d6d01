"""Timestamps and identifier generation.

All wall-clock reads and id suffixes in the package flow through here so
that test harnesses can make runs byte-deterministic:

* ``TABLEVAULT_CLOCK_START=<epoch float>`` — the clock becomes a counter
  starting at that instant, advancing 1 microsecond per read (single
  process).
* ``TABLEVAULT_CLOCK_FILE=<path>`` — the counter is shared through a file
  so several cooperating processes draw from one deterministic sequence.
* ``TABLEVAULT_ID_SEED=<str>`` — id suffixes derive from (seed, tick)
  instead of system entropy.

Without these variables the real clock and system entropy are used.
"""

from __future__ import annotations

import hashlib
import os
import secrets
import string
import threading
import time
from datetime import datetime, timezone

_SUFFIX_ALPHABET = string.ascii_lowercase + string.digits
_CLOCK_FILE_BASE = 1600000000.0


class _Clock:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._seed = os.environ.get("TABLEVAULT_ID_SEED")
        self._file = os.environ.get("TABLEVAULT_CLOCK_FILE")
        start = os.environ.get("TABLEVAULT_CLOCK_START")
        self._start = float(start) if start else None
        self._ticks = 0

    @property
    def deterministic(self) -> bool:
        return self._file is not None or self._start is not None

    def now(self) -> float:
        """Epoch seconds; in deterministic modes each read is a fresh tick."""
        if self._file is not None:
            return _CLOCK_FILE_BASE + self._file_tick() * 1e-6
        if self._start is not None:
            with self._lock:
                self._ticks += 1
                return self._start + self._ticks * 1e-6
        return time.time()

    def _file_tick(self) -> int:
        # Counter file shared between processes; guarded by an O_EXCL lock.
        lock_path = self._file + ".lock"
        while True:
            try:
                fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                break
            except FileExistsError:
                time.sleep(0.001)
        try:
            try:
                with open(self._file, "r", encoding="utf-8") as fh:
                    tick = int(fh.read().strip() or "0")
            except FileNotFoundError:
                tick = 0
            with open(self._file, "w", encoding="utf-8") as fh:
                fh.write(str(tick + 1))
            return tick
        finally:
            os.close(fd)
            os.unlink(lock_path)

    def suffix(self, ts: float, length: int = 6) -> str:
        if self._seed is not None:
            digest = hashlib.sha256(f"{self._seed}:{ts:.6f}".encode()).digest()
            return "".join(_SUFFIX_ALPHABET[b % len(_SUFFIX_ALPHABET)] for b in digest[:length])
        return "".join(secrets.choice(_SUFFIX_ALPHABET) for _ in range(length))


_clock = _Clock()


def now() -> float:
    return _clock.now()


def is_deterministic() -> bool:
    return _clock.deterministic


def iso(ts: float | None = None) -> str:
    """ISO-8601 UTC timestamp with microseconds."""
    if ts is None:
        ts = now()
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def compact(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y%m%dT%H%M%S.%f")


def new_instance_id() -> str:
    """Origin-timestamp id: ``<UTC yyyymmddThhmmss.micro>_<6-char suffix>``.

    Lexicographic order equals creation order; the suffix disambiguates
    same-microsecond creation.
    """
    ts = now()
    return f"{compact(ts)}_{_clock.suffix(ts)}"


def new_op_id() -> str:
    ts = now()
    return f"op-{compact(ts)}-{_clock.suffix(ts)}"


def is_op_id(value: str) -> bool:
    """Structural check only; existence is a separate lookup."""
    return value.startswith("op-") and value.count("-") >= 2
