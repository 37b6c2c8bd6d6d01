"""Crash recovery: resolve every orphaned operation found on disk.

Disposition per orphan, derived solely from durable state:

* record says ``paused``      -> left in place, locks intact, resumable
* holder heartbeat still fresh -> skipped (another live process owns it)
* WAL contains a commit point  -> roll forward (re-run idempotent actions)
* otherwise                    -> roll back from the backup links

A torn WAL tail (torn write at crash) is truncated to the last valid
entry and flagged; lock files whose holder left no operation behind and
stale heartbeat files are reaped.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .. import _fsio, layout
from . import operation as opmod
from . import wal as walmod
from .locks import LockManager, heartbeat_is_stale, heartbeat_path


@dataclass
class RecoveryEntry:
    op_id: str
    disposition: str  # rolled_back | rolled_forward | left_paused | skipped_live | discarded
    torn_wal: bool = False
    detail: str = ""


@dataclass
class RecoveryReport:
    entries: list[RecoveryEntry] = field(default_factory=list)
    removed_locks: list[str] = field(default_factory=list)
    removed_heartbeats: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.entries or self.removed_locks or self.removed_heartbeats)

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "operations": [
                {
                    "op_id": e.op_id,
                    "disposition": e.disposition,
                    "torn_wal": e.torn_wal,
                    "detail": e.detail,
                }
                for e in self.entries
            ],
            "removed_locks": list(self.removed_locks),
            "removed_heartbeats": list(self.removed_heartbeats),
        }


def _holder_alive(root: Path, process_id: str | None, stale_s: float) -> bool:
    if not process_id:
        return False
    return not heartbeat_is_stale(root, process_id, stale_s)


def _discard(root: Path, op_id: str, locks: LockManager, fsync: bool) -> None:
    shutil.rmtree(layout.op_dir(root, op_id), ignore_errors=True)
    try:
        layout.wal_path(root, op_id).unlink()
    except FileNotFoundError:
        pass
    if fsync:
        _fsio.fsync_dir(layout.active_log_dir(root))
    locks.release_all(op_id)


def recover(root: Path, cfg: layout.RepoConfig) -> RecoveryReport:
    report = RecoveryReport()
    locks = LockManager(root, fsync=cfg.fsync)
    op_ids = opmod.list_active(root)
    for op_id in op_ids:
        record = opmod.read_record(root, op_id)
        wal_path = layout.wal_path(root, op_id)
        entries, torn = walmod.read_wal(wal_path)
        begin = walmod.find(entries, walmod.BEGIN)
        process_id = None
        if record is not None:
            process_id = record.get("process_id")
        elif begin is not None:
            process_id = begin["payload"].get("process_id")

        if record is not None and record.get("state") == "paused":
            report.entries.append(RecoveryEntry(op_id, "left_paused", torn_wal=torn))
            continue
        if _holder_alive(root, process_id, cfg.stale_heartbeat_s):
            report.entries.append(RecoveryEntry(op_id, "skipped_live"))
            continue
        if torn:
            walmod.truncate_to(wal_path, entries, fsync=cfg.fsync)
        if begin is None:
            # crashed before the WAL begin entry became durable: no
            # mutation can have happened
            _discard(root, op_id, locks, cfg.fsync)
            report.entries.append(
                RecoveryEntry(op_id, "discarded", torn_wal=torn, detail="no begin entry")
            )
            continue

        commit = walmod.find(entries, walmod.COMMIT_POINT)
        if commit is not None:
            opmod.run_actions(
                root,
                commit["payload"]["actions"],
                layout.op_dir(root, op_id),
                cfg.fsync,
                replay=True,
            )
            _discard(root, op_id, locks, cfg.fsync)
            report.entries.append(RecoveryEntry(op_id, "rolled_forward", torn_wal=torn))
            continue

        backup = walmod.find(entries, walmod.BACKUP_LINK)
        manifest = backup["payload"] if backup else {"files": [], "dirs": []}
        scope = begin["payload"].get("scope", [])
        opmod.restore_backup(root, scope, manifest, layout.op_dir(root, op_id) / "backup")
        opmod.log_event_once(
            root,
            {
                "event": "reverted",
                "op_id": op_id,
                "op_type": begin["payload"].get("op_type", "unknown"),
                "author": begin["payload"].get("author", "unknown"),
                "targets": begin["payload"].get("targets", []),
                "reason": "crash recovery rollback",
                "record": record or begin["payload"],
            },
            fsync=cfg.fsync,
        )
        _discard(root, op_id, locks, cfg.fsync)
        report.entries.append(RecoveryEntry(op_id, "rolled_back", torn_wal=torn))

    # lock files left by operations that no longer exist
    survivors = set(opmod.list_active(root))
    for rec in locks.list_records():
        if rec.holder in survivors:
            continue
        if _holder_alive(root, rec.process_id, cfg.stale_heartbeat_s):
            continue
        locks.release_all(rec.holder)
        report.removed_locks.append(rec.holder)

    hb_dir = layout.heartbeats_dir(root)
    if hb_dir.exists():
        for name in sorted(os.listdir(hb_dir)):
            if heartbeat_is_stale(root, name, cfg.stale_heartbeat_s):
                try:
                    heartbeat_path(root, name).unlink()
                    report.removed_heartbeats.append(name)
                except FileNotFoundError:
                    pass
    return report
