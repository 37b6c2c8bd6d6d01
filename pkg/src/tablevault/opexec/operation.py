"""Operation lifecycle: conservative 2PL, WAL, copy-on-write, revert.

Every mutation runs as an operation:

1. ``begin`` acquires ALL locks atomically (conservative two-phase
   locking — no lock is ever requested after setup, so no wait cycle can
   form), hard-links every file under the write scope into a per-op
   backup area, and makes the WAL ``begin`` entry durable before any
   mutation.
2. ``stage_write`` writes new content to a fresh file, records a WAL
   ``file_write`` with its digest, then renames it into place; originals
   survive through the backup links, so a full revert restores the
   pre-begin tree byte-identically.
3. ``validate_and_commit`` runs the operation's validation checks; any
   failure triggers an automatic revert. On success the WAL
   ``commit_point`` (carrying the idempotent post-commit actions) is
   fsynced — that single write is the atomic commit. Visibility-flipping
   files (instance/table descriptions) land as post-commit actions, so a
   lock-free reader can never observe data without its final metadata.

Crash recovery replays from the WAL: past the commit point it rolls
forward by re-running the actions; before it, it rolls back from the
backup links. Both paths are idempotent.

Pause keeps locks and WAL intact indefinitely (surviving process
restarts); every pause/resume/stop decision appends to the operation's
decision log with the deciding author.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .. import _clock, _fsio, layout
from ..errors import (
    AccessDenied,
    Busy,
    NotFound,
    Reverted,
    ScopeError,
    StateError,
    ValidationError,
)
from . import wal as walmod
from .kill import maybe_kill
from .locks import LockManager, process_tag

STATES = ("pending", "active", "paused", "committed", "reverted")

_TRANSITIONS = {
    ("pending", "active"),
    ("active", "paused"),
    ("paused", "active"),
    ("active", "committed"),
    ("active", "reverted"),
    ("paused", "reverted"),
}


# -- completed log ----------------------------------------------------------


def log_event(root: Path, doc: dict, fsync: bool = True) -> None:
    doc = dict(doc)
    doc.setdefault("format_version", 1)
    doc.setdefault("ts", _clock.iso())
    _fsio.append_line(layout.completed_log(root), _fsio.dump_json_line(doc), fsync=fsync)


def read_events(root: Path) -> list[dict]:
    return _fsio.read_jsonl(layout.completed_log(root))


def event_exists(root: Path, op_id: str, kind: str) -> bool:
    return any(
        e.get("op_id") == op_id and e.get("event") == kind for e in read_events(root)
    )


def log_event_once(root: Path, doc: dict, fsync: bool = True) -> None:
    if doc.get("op_id") and event_exists(root, doc["op_id"], doc.get("event", "")):
        return
    log_event(root, doc, fsync=fsync)


# -- operation records -------------------------------------------------------


def record_path(root: Path, op_id: str) -> Path:
    return layout.op_dir(root, op_id) / "record.json"


def read_record(root: Path, op_id: str) -> dict | None:
    try:
        return json.loads(record_path(root, op_id).read_text("utf-8"))
    except (FileNotFoundError, json.JSONDecodeError):
        return None


def write_record(root: Path, record: dict, fsync: bool = True) -> None:
    path = record_path(root, record["op_id"])
    _fsio.atomic_write_bytes(
        path, (json.dumps(record, sort_keys=True) + "\n").encode("utf-8"), fsync=fsync
    )


def list_active(root: Path) -> list[str]:
    base = layout.active_log_dir(root)
    if not base.exists():
        return []
    ids = set()
    for name in sorted(os.listdir(base)):
        if name.endswith(".wal"):
            ids.add(name[: -len(".wal")])
        elif (base / name).is_dir():
            ids.add(name)
    return sorted(ids)


def author_chain(root: Path, author: str) -> list[str]:
    """Authors from the given one up to the root (non-operation) author."""
    chain = [author]
    seen = {author}
    current = author
    while _clock.is_op_id(current):
        rec = read_record(root, current)
        parent_author = None
        if rec is not None:
            parent_author = rec.get("author")
        else:
            for event in read_events(root):
                if event.get("op_id") == current and event.get("author"):
                    parent_author = event["author"]
                    break
        if parent_author is None or parent_author in seen:
            break
        chain.append(parent_author)
        seen.add(parent_author)
        current = parent_author
    return chain


def _authorized(root: Path, record: dict, caller: str) -> bool:
    return caller in author_chain(root, record["author"])


# -- write scope -------------------------------------------------------------


def scope_for_target(target: str) -> list[str]:
    """Repo-relative directory prefixes an exclusive target may write under."""
    parts = target.split("/")
    if parts[0] == "table" and len(parts) == 2:
        return [f"{layout.TABLES}/{parts[1]}", f"{layout.ARCHIVE}/{parts[1]}"]
    if parts[0] == "table" and len(parts) == 3:
        return [
            f"{layout.TABLES}/{parts[1]}/{parts[2]}",
            f"{layout.ARCHIVE}/{parts[1]}/{parts[2]}",
        ]
    if parts[0] == "module" and len(parts) == 2:
        return [f"{layout.CODE_MODULES}/{parts[1]}"]
    raise ValidationError(f"unknown lock target {target!r}")


def _in_scope(relpath: str, scope: list[str]) -> bool:
    return any(relpath == p or relpath.startswith(p + "/") for p in scope)


# -- backup manifest ---------------------------------------------------------


def build_backup(root: Path, scope: list[str], backup_dir: Path) -> dict:
    """Hard-link every existing file under scope into the backup area."""
    files: list[str] = []
    dirs: list[str] = []
    for prefix in scope:
        base = root / prefix
        if not base.exists():
            continue
        dirs.append(prefix)
        for d in _fsio.walk_dirs(base):
            dirs.append(d.relative_to(root).as_posix())
        for f in _fsio.walk_files(base):
            rel = f.relative_to(root).as_posix()
            files.append(rel)
            _fsio.link_or_copy(f, backup_dir / rel)
    return {"files": sorted(files), "dirs": sorted(dirs)}


def restore_backup(root: Path, scope: list[str], manifest: dict, backup_dir: Path) -> None:
    """Return the scope subtree to the manifested state, byte-identically."""
    files = set(manifest.get("files", ()))
    dirs = set(manifest.get("dirs", ()))
    for prefix in scope:
        base = root / prefix
        if not base.exists():
            continue
        for f in _fsio.walk_files(base):
            rel = f.relative_to(root).as_posix()
            if rel not in files:
                f.unlink()
        maybe_kill("rollback:mid")
        all_dirs = sorted(
            (d.relative_to(root).as_posix() for d in _fsio.walk_dirs(base)),
            key=len,
            reverse=True,
        )
        for rel in all_dirs:
            if rel not in dirs:
                try:
                    os.rmdir(root / rel)
                except OSError:
                    pass
        if prefix not in dirs:
            try:
                os.rmdir(base)
            except OSError:
                pass
    for rel in sorted(dirs):
        _fsio.ensure_dir(root / rel)
    for rel in sorted(files):
        target = root / rel
        source = backup_dir / rel
        if target.exists():
            # a staged write replaced the directory entry; the backup link
            # still holds the original inode
            try:
                if os.path.samefile(target, source):
                    continue
            except OSError:
                pass
            target.unlink()
        _fsio.link_or_copy(source, target)


# -- post-commit actions ------------------------------------------------------

# Each action is idempotent: rerunning a partially applied list converges
# on the same final state, which is what roll-forward recovery relies on.


def run_actions(
    root: Path, actions: list[dict], op_dir: Path, fsync: bool, replay: bool = False
) -> None:
    for action in actions:
        kind = action["kind"]
        if kind == "replace_file":
            src = op_dir / action["src"]
            dst = root / action["path"]
            if src.exists():
                _fsio.ensure_dir(dst.parent)
                os.replace(src, dst)
                if fsync:
                    _fsio.fsync_dir(dst.parent)
        elif kind == "move_dir" or kind == "move_file":
            src = root / action["src"]
            dst = root / action["dst"]
            if dst.exists():
                pass
            elif src.exists():
                _fsio.ensure_dir(dst.parent)
                os.replace(src, dst)
                if fsync:
                    _fsio.fsync_dir(dst.parent)
        elif kind == "remove_file":
            target = root / action["path"]
            try:
                target.unlink()
            except FileNotFoundError:
                pass
        elif kind == "remove_dir":
            target = root / action["path"]
            if target.exists():
                shutil.rmtree(target)
        elif kind == "log_event":
            # the duplicate scan is only needed when recovery replays a
            # commit whose actions may have partially run already
            if replay:
                log_event_once(root, action["event"], fsync=fsync)
            else:
                log_event(root, action["event"], fsync=fsync)
        elif kind == "append_once":
            path = root / action["path"]
            if not replay or action["line"] not in _fsio.read_lines(path):
                _fsio.append_line(path, action["line"], fsync=fsync)
        else:
            raise ValidationError(f"unknown post-commit action {kind!r}")
        maybe_kill("commit:action")


# -- the operation handle ------------------------------------------------------


@dataclass
class Operation:
    root: Path
    op_id: str
    author: str
    op_type: str
    targets: list[dict]
    scope: list[str]
    fsync: bool
    wal: walmod.WalWriter
    locks: LockManager
    record: dict
    actions: list[dict] = field(default_factory=list)
    payload: dict = field(default_factory=dict)
    _stage_count: int = 0
    _finished: bool = False

    @property
    def op_dir(self) -> Path:
        return layout.op_dir(self.root, self.op_id)

    @property
    def stage_dir(self) -> Path:
        return self.op_dir / "stage"

    @property
    def backup_dir(self) -> Path:
        return self.op_dir / "backup"

    @property
    def rows_dir(self) -> Path:
        return self.op_dir / "rows"

    # -- staging ----------------------------------------------------------

    def _check_scope(self, relpath: str) -> None:
        if not _in_scope(relpath, self.scope):
            raise ScopeError(
                f"path {relpath!r} is outside the operation's locked targets"
            )

    def _stage_bytes(self, data: bytes, name: str) -> Path:
        _fsio.ensure_dir(self.stage_dir)
        path = self.stage_dir / name
        with open(path, "wb") as fh:
            fh.write(data)
            if self.fsync:
                fh.flush()
                os.fsync(fh.fileno())
        return path

    def stage_write(self, relpath: str, data: bytes) -> None:
        """Copy-on-write file replacement, durable before rename."""
        self._check_scope(relpath)
        self._stage_count += 1
        tmp = self._stage_bytes(data, f"w{self._stage_count:06d}")
        self.wal.append(
            walmod.FILE_WRITE,
            {"path": relpath, "digest": _fsio.sha256_bytes(data), "size": len(data)},
        )
        maybe_kill("stage:pre_rename")
        dst = self.root / relpath
        _fsio.ensure_dir(dst.parent)
        os.replace(tmp, dst)
        if self.fsync:
            _fsio.fsync_dir(dst.parent)
        maybe_kill("stage:post_rename")

    def stage_finalize(self, relpath: str, data: bytes) -> None:
        """Stage a visibility-flipping file; it lands only after commit."""
        self._check_scope(relpath)
        self._stage_count += 1
        name = f"f{self._stage_count:06d}"
        self._stage_bytes(data, name)
        self.wal.append(
            walmod.FILE_WRITE,
            {
                "path": relpath,
                "digest": _fsio.sha256_bytes(data),
                "size": len(data),
                "finalize": True,
            },
        )
        self.actions.append(
            {"kind": "replace_file", "src": f"stage/{name}", "path": relpath}
        )
        maybe_kill("stage:finalize")

    def ensure_dir(self, relpath: str) -> None:
        self._check_scope(relpath)
        _fsio.ensure_dir(self.root / relpath)

    def add_action(self, action: dict) -> None:
        for key in ("path", "src", "dst"):
            rel = action.get(key)
            if key == "src" and action["kind"] == "replace_file":
                continue
            if rel is None:
                continue
            top = rel.split("/", 1)[0]
            if top in (layout.TABLES, layout.CODE_MODULES):
                self._check_scope(rel)
        self.actions.append(action)

    # -- interrupts --------------------------------------------------------

    def poll_interrupt(self) -> None:
        """Honor pause/stop requests recorded by other handles or processes."""
        rec = read_record(self.root, self.op_id)
        if rec is None:
            return
        stop = rec.get("stop_requested")
        if stop is not None:
            self.record = rec
            raise StopRequested(bool(stop.get("revert", True)))
        if rec.get("state") == "paused":
            self.record = rec
            raise PauseRequested()

    def pause_self(self, reason: str = "") -> None:
        """Transition to paused from inside the running operation."""
        self.record["state"] = "paused"
        self.record["decision_log"].append(
            {"ts": _clock.iso(), "author": self.author, "action": "pause"}
        )
        if reason:
            self.record["pause_reason"] = reason
        write_record(self.root, self.record, fsync=self.fsync)

    # -- terminal transitions ------------------------------------------------

    def validate_and_commit(
        self, checks: list[tuple[str, Callable[[], None]]] | None = None
    ) -> dict:
        """Run validation gates, then commit atomically; failures auto-revert."""
        assert not self._finished
        try:
            self.poll_interrupt()
        except StopRequested as stop:
            if stop.revert:
                self.revert("stopped by author")
                raise Reverted("stopped by author", self.op_id)
            # stop without revert: proceed straight to validation + commit
        except PauseRequested:
            raise
        names = []
        for name, check in checks or []:
            try:
                check()
            except Exception as exc:  # a crashing check is a failed check
                self.revert(f"validation {name!r} failed: {exc}")
                raise Reverted(f"validation {name!r} failed: {exc}", self.op_id)
            names.append(name)
        self.wal.append(walmod.VALIDATION_PASS, {"checks": names})
        finished = _clock.iso()
        self.record["state"] = "committed"
        self.record["finished_at"] = finished
        event = {
            "event": "committed",
            "op_id": self.op_id,
            "op_type": self.op_type,
            "author": self.author,
            "targets": self.targets,
            "started_at": self.record["started_at"],
            "finished_at": finished,
            "record": self.record,
            "detail": {k: v for k, v in self.payload.items() if not k.startswith("_")},
        }
        actions = list(self.actions) + [{"kind": "log_event", "event": event}]
        maybe_kill("commit:pre_point")
        self.wal.append(walmod.COMMIT_POINT, {"actions": actions})
        maybe_kill("commit:post_point")
        run_actions(self.root, actions, self.op_dir, self.fsync)
        maybe_kill("commit:pre_cleanup")
        self._cleanup()
        self._finished = True
        return event

    def revert(self, reason: str) -> None:
        """Automatic rollback: restore the pre-begin tree, record the event."""
        if self._finished:
            return
        maybe_kill("rollback:start")
        manifest = self.payload.get("_manifest", {})
        restore_backup(self.root, self.scope, manifest, self.backup_dir)
        self.wal.append(walmod.ROLLBACK_DONE, {"reason": reason})
        maybe_kill("rollback:done")
        self.record["state"] = "reverted"
        self.record["finished_at"] = _clock.iso()
        log_event_once(
            self.root,
            {
                "event": "reverted",
                "op_id": self.op_id,
                "op_type": self.op_type,
                "author": self.author,
                "targets": self.targets,
                "reason": reason,
                "record": self.record,
            },
            fsync=self.fsync,
        )
        self._cleanup()
        self._finished = True

    def _cleanup(self) -> None:
        # op dir and WAL disappear before locks release so recovery can
        # never replay an operation whose targets were re-acquired
        self.wal.close()
        shutil.rmtree(self.op_dir, ignore_errors=True)
        try:
            layout.wal_path(self.root, self.op_id).unlink()
        except FileNotFoundError:
            pass
        if self.fsync:
            _fsio.fsync_dir(layout.active_log_dir(self.root))
        maybe_kill("cleanup:pre_unlock")
        self.locks.release_all(self.op_id)


class PauseRequested(Exception):
    """Internal control-flow signal: the operation should park itself."""


class StopRequested(Exception):
    """Internal control-flow signal: a stop decision was recorded."""

    def __init__(self, revert: bool):
        super().__init__("stop requested")
        self.revert = revert


# -- begin ---------------------------------------------------------------------


def begin(
    root: Path,
    cfg: layout.RepoConfig,
    author: str,
    op_type: str,
    targets: list[tuple[str, str]],
    parent: str | None = None,
    payload: dict | None = None,
) -> Operation:
    """Acquire all locks, link backups, make the WAL begin entry durable."""
    op_id = _clock.new_op_id()
    lock_requests = sorted(set(targets))
    manager = LockManager(root, fsync=cfg.fsync)
    manager.acquire_all(lock_requests, op_id, cfg.lock_timeout_s)
    maybe_kill("begin:locks")
    try:
        scope: list[str] = []
        for target, mode in lock_requests:
            if mode == "exclusive":
                for prefix in scope_for_target(target):
                    if prefix not in scope:
                        scope.append(prefix)
        op_dir = layout.op_dir(root, op_id)
        backup_dir = op_dir / "backup"
        _fsio.ensure_dir(backup_dir)
        manifest = build_backup(root, scope, backup_dir)
        maybe_kill("begin:backup")
        started = _clock.iso()
        writer = walmod.WalWriter(layout.wal_path(root, op_id), fsync=cfg.fsync)
        writer.append(
            walmod.BEGIN,
            {
                "format_version": 1,
                "op_id": op_id,
                "author": author,
                "op_type": op_type,
                "targets": [{"target": t, "mode": m} for t, m in lock_requests],
                "parent": parent,
                "process_id": process_tag(),
                "started_at": started,
                "scope": scope,
                "payload": payload or {},
            },
        )
        writer.append(walmod.BACKUP_LINK, manifest)
        maybe_kill("begin:wal")
        record = {
            "format_version": 1,
            "op_id": op_id,
            "author": author,
            "op_type": op_type,
            "targets": [{"target": t, "mode": m} for t, m in lock_requests],
            "state": "active",
            "wal_path": f"{layout.ACTIVE_LOG}/{op_id}.wal",
            "started_at": started,
            "finished_at": None,
            "parent": parent,
            "process_id": process_tag(),
            "decision_log": [],
            "payload": payload or {},
        }
        write_record(root, record, fsync=cfg.fsync)
        maybe_kill("begin:record")
    except Busy:
        raise
    except BaseException:
        shutil.rmtree(layout.op_dir(root, op_id), ignore_errors=True)
        try:
            layout.wal_path(root, op_id).unlink()
        except FileNotFoundError:
            pass
        manager.release_all(op_id)
        raise
    op = Operation(
        root=root,
        op_id=op_id,
        author=author,
        op_type=op_type,
        targets=record["targets"],
        scope=scope,
        fsync=cfg.fsync,
        wal=writer,
        locks=manager,
        record=record,
        payload={"_manifest": manifest, **(payload or {})},
    )
    return op


# -- pause / resume / stop -------------------------------------------------------


def _load_record_or_raise(root: Path, op_id: str) -> dict:
    record = read_record(root, op_id)
    if record is None:
        raise NotFound(f"no active operation {op_id}")
    return record


def _decide(root: Path, cfg: layout.RepoConfig, record: dict, author: str, action: str) -> None:
    if not _authorized(root, record, author):
        raise AccessDenied(
            f"{author!r} is not the author of {record['op_id']} or an ancestor"
        )
    record["decision_log"].append({"ts": _clock.iso(), "author": author, "action": action})
    write_record(root, record, fsync=cfg.fsync)


def pause(root: Path, cfg: layout.RepoConfig, op_id: str, author: str) -> dict:
    record = _load_record_or_raise(root, op_id)
    if record["state"] != "active":
        raise StateError(f"operation {op_id} is {record['state']}, not active")
    record["state"] = "paused"
    _decide(root, cfg, record, author, "pause")
    return record


def mark_resumed(root: Path, cfg: layout.RepoConfig, op_id: str, author: str) -> dict:
    """Flip a paused record back to active under the resuming process."""
    record = _load_record_or_raise(root, op_id)
    if record["state"] != "paused":
        raise StateError(f"operation {op_id} is {record['state']}, not paused")
    record["state"] = "active"
    record["process_id"] = process_tag()
    _decide(root, cfg, record, author, "resume")
    return record


def request_stop(
    root: Path, cfg: layout.RepoConfig, op_id: str, author: str, revert: bool
) -> dict:
    record = _load_record_or_raise(root, op_id)
    if record["state"] not in ("active", "paused"):
        raise StateError(f"operation {op_id} is {record['state']}")
    was_paused = record["state"] == "paused"
    if not was_paused:
        record["stop_requested"] = {"revert": revert, "author": author}
    _decide(root, cfg, record, author, "stop")
    record["_was_paused"] = was_paused
    return record


def adopt(root: Path, cfg: layout.RepoConfig, op_id: str) -> Operation:
    """Rebuild an Operation handle from its on-disk record and WAL."""
    record = _load_record_or_raise(root, op_id)
    entries, torn = walmod.read_wal(layout.wal_path(root, op_id))
    if torn:
        walmod.truncate_to(layout.wal_path(root, op_id), entries, fsync=cfg.fsync)
    begin_entry = walmod.find(entries, walmod.BEGIN)
    if begin_entry is None:
        raise StateError(f"operation {op_id} has no begin entry")
    backup = walmod.find(entries, walmod.BACKUP_LINK)
    manifest = backup["payload"] if backup else {"files": [], "dirs": []}
    writer = walmod.WalWriter.reopen(layout.wal_path(root, op_id), fsync=cfg.fsync)
    payload = dict(begin_entry["payload"].get("payload") or {})
    payload["_manifest"] = manifest
    stage_count = sum(1 for e in entries if e["kind"] == walmod.FILE_WRITE)
    return Operation(
        root=root,
        op_id=op_id,
        author=record["author"],
        op_type=record["op_type"],
        targets=record["targets"],
        scope=begin_entry["payload"]["scope"],
        fsync=cfg.fsync,
        wal=writer,
        locks=LockManager(root, fsync=cfg.fsync),
        record=record,
        actions=[],
        payload=payload,
        _stage_count=stage_count,
    )
