"""File-based shared/exclusive locks at table and instance granularity.

Targets form a hierarchy (``table/users`` covers ``table/users/<id>``;
code modules lock under ``module/<name>``). Compatibility rule: an
exclusive lock excludes every other lock on the same target or a
descendant; a shared lock excludes only exclusive locks at or above it.
Consequently a shared table lock coexists with an exclusive lock on one
of the table's instances, so readers of committed instances never block
on a writer building a new one.

Each granted lock is one JSON record file under ``metadata/locks``; the
whole requested set is granted atomically under a repository-wide mutex
file, which is what makes conservative two-phase locking (all locks at
setup, none later) deadlock-free. Lock files persist across process
crashes; stale holders are reaped by recovery, never by acquisition.
"""

from __future__ import annotations

import json
import os
import random
import secrets
import socket
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .. import _clock, _fsio, layout
from ..errors import Busy
from .kill import maybe_kill

SHARED = "shared"
EXCLUSIVE = "exclusive"

_MUTEX_STALE_S = 10.0


def table_target(table: str) -> str:
    return f"table/{table}"


def instance_target(table: str, instance: str) -> str:
    return f"table/{table}/{instance}"


def module_target(name: str) -> str:
    return f"module/{name}"


def process_tag() -> str:
    return f"{socket.gethostname()}-{os.getpid()}"


def _covers(ancestor: str, target: str) -> bool:
    return ancestor == target or target.startswith(ancestor + "/")


def conflicts(target_a: str, mode_a: str, target_b: str, mode_b: str) -> bool:
    if mode_a == EXCLUSIVE and _covers(target_a, target_b):
        return True
    if mode_b == EXCLUSIVE and _covers(target_b, target_a):
        return True
    return False


@dataclass(frozen=True)
class LockRecord:
    target: str
    mode: str
    holder: str
    acquired_at: str
    process_id: str


def _lock_filename(target: str, op_id: str) -> str:
    return f"{target.replace('/', '~')}.{op_id}.lock"


class LockManager:
    def __init__(self, root: Path, fsync: bool = True):
        self.root = root
        self.fsync = fsync
        self.dir = layout.locks_dir(root)

    # -- repository-wide mutex ------------------------------------------

    def _mutex_path(self) -> Path:
        return self.dir / ".manager.mutex"

    def _acquire_mutex(self) -> None:
        _fsio.ensure_dir(self.dir)
        path = self._mutex_path()
        while True:
            try:
                fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, f"{process_tag()} {time.time()}".encode())
                os.close(fd)
                return
            except FileExistsError:
                try:
                    age = time.time() - path.stat().st_mtime
                except FileNotFoundError:
                    continue
                if age > _MUTEX_STALE_S:
                    # break a dead holder's mutex; rename is atomic so only
                    # one breaker wins
                    try:
                        os.rename(path, self.dir / f".stale-{secrets.token_hex(4)}")
                    except FileNotFoundError:
                        pass
                    continue
                time.sleep(0.001)

    def _release_mutex(self) -> None:
        try:
            os.unlink(self._mutex_path())
        except FileNotFoundError:
            pass

    # -- records ---------------------------------------------------------

    def list_records(self) -> list[LockRecord]:
        records = []
        if not self.dir.exists():
            return records
        for name in sorted(os.listdir(self.dir)):
            if not name.endswith(".lock"):
                continue
            try:
                doc = json.loads((self.dir / name).read_text("utf-8"))
            except (OSError, json.JSONDecodeError):
                continue
            records.append(
                LockRecord(
                    target=doc["target"],
                    mode=doc["mode"],
                    holder=doc["holder"],
                    acquired_at=doc["acquired_at"],
                    process_id=doc.get("process_id", ""),
                )
            )
        return records

    def _write_record(self, target: str, mode: str, op_id: str) -> None:
        doc = {
            "format_version": 1,
            "holder": op_id,
            "mode": mode,
            "acquired_at": _clock.iso(),
            "target": target,
            "process_id": process_tag(),
        }
        _fsio.atomic_write_bytes(
            self.dir / _lock_filename(target, op_id),
            (json.dumps(doc, sort_keys=True) + "\n").encode("utf-8"),
            fsync=self.fsync,
        )
        maybe_kill("begin:lock_record")

    # -- acquisition -----------------------------------------------------

    def acquire_all(
        self, requests: list[tuple[str, str]], op_id: str, timeout: float
    ) -> None:
        """Grant every (target, mode) atomically, or raise Busy.

        Targets are sorted for determinism; nothing is written unless the
        whole set is compatible with current holders, so a timeout leaves
        no partial acquisition behind.
        """
        ordered = sorted(set(requests))
        deadline = time.monotonic() + timeout
        delay = 0.002
        while True:
            self._acquire_mutex()
            try:
                held = [r for r in self.list_records() if r.holder != op_id]
                blocker = None
                for target, mode in ordered:
                    for rec in held:
                        if conflicts(target, mode, rec.target, rec.mode):
                            blocker = (target, mode, rec)
                            break
                    if blocker:
                        break
                if blocker is None:
                    for target, mode in ordered:
                        self._write_record(target, mode, op_id)
                    return
            finally:
                self._release_mutex()
            if time.monotonic() >= deadline:
                target, mode, rec = blocker
                raise Busy(
                    f"lock timeout: {mode} on {target} blocked by "
                    f"{rec.holder} ({rec.mode} on {rec.target})"
                )
            time.sleep(delay + random.uniform(0, delay / 2))
            delay = min(delay * 1.6, 0.1)

    def release_all(self, op_id: str) -> int:
        if not self.dir.exists():
            return 0
        count = 0
        for name in sorted(os.listdir(self.dir)):
            if name.endswith(f".{op_id}.lock"):
                try:
                    os.unlink(self.dir / name)
                    count += 1
                except FileNotFoundError:
                    pass
        return count

    def holders(self, target: str) -> list[LockRecord]:
        return [r for r in self.list_records() if r.target == target]


# -- process heartbeats ----------------------------------------------------


def heartbeat_path(root: Path, tag: str | None = None) -> Path:
    return layout.heartbeats_dir(root) / (tag or process_tag())


def touch_heartbeat(root: Path) -> None:
    path = heartbeat_path(root)
    _fsio.ensure_dir(path.parent)
    with open(path, "a", encoding="utf-8"):
        pass
    os.utime(path, None)


def heartbeat_is_stale(root: Path, tag: str, threshold_s: float) -> bool:
    path = heartbeat_path(root, tag)
    try:
        age = time.time() - path.stat().st_mtime
    except FileNotFoundError:
        return True
    return age > threshold_s


class HeartbeatDaemon:
    """Touches this process's heartbeat file on an interval."""

    def __init__(self, root: Path, interval_s: float):
        self.root = root
        self.interval_s = interval_s
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        if self._thread is not None:
            return
        touch_heartbeat(self.root)
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.wait(self.interval_s):
            try:
                touch_heartbeat(self.root)
            except OSError:
                pass

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=1.0)
            self._thread = None
