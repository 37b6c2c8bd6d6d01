"""Per-operation write-ahead log: JSON lines, fsync after every entry.

Entry schema: ``{"seq": int, "kind": str, "ts": iso8601, "payload": {...}}``
with kinds ``begin``, ``backup_link``, ``file_write``, ``validation_pass``,
``commit_point`` and ``rollback_done``. Entries are append-only and
fsync-ordered: the commit point reaches disk only after every file write
it covers.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .. import _clock

BEGIN = "begin"
BACKUP_LINK = "backup_link"
FILE_WRITE = "file_write"
VALIDATION_PASS = "validation_pass"
COMMIT_POINT = "commit_point"
ROLLBACK_DONE = "rollback_done"

KINDS = (BEGIN, BACKUP_LINK, FILE_WRITE, VALIDATION_PASS, COMMIT_POINT, ROLLBACK_DONE)


class WalWriter:
    def __init__(self, path: Path, fsync: bool = True, next_seq: int = 0):
        self.path = path
        self.fsync = fsync
        self.next_seq = next_seq
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)

    def append(self, kind: str, payload: dict | None = None) -> int:
        assert kind in KINDS, kind
        seq = self.next_seq
        entry = {"seq": seq, "kind": kind, "ts": _clock.iso(), "payload": payload or {}}
        os.write(self._fd, (json.dumps(entry, sort_keys=True) + "\n").encode("utf-8"))
        if self.fsync:
            os.fsync(self._fd)
        self.next_seq = seq + 1
        return seq

    def close(self) -> None:
        try:
            os.close(self._fd)
        except OSError:
            pass

    @classmethod
    def reopen(cls, path: Path, fsync: bool = True) -> "WalWriter":
        entries, _ = read_wal(path)
        next_seq = entries[-1]["seq"] + 1 if entries else 0
        return cls(path, fsync=fsync, next_seq=next_seq)


def read_wal(path: Path) -> tuple[list[dict], bool]:
    """All decodable entries plus a flag for a torn (undecodable) tail."""
    entries: list[dict] = []
    torn = False
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        return entries, torn
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            if not isinstance(entry, dict) or "seq" not in entry or "kind" not in entry:
                raise ValueError("not a WAL entry")
        except (json.JSONDecodeError, ValueError):
            torn = True
            if i != len(lines) - 1:
                # corruption before the tail: discard everything after it
                entries = entries[:i]
            break
        entries.append(entry)
    return entries, torn


def truncate_to(path: Path, entries: list[dict], fsync: bool = True) -> None:
    """Rewrite the log with only the given (valid) entries."""
    body = "".join(json.dumps(e, sort_keys=True) + "\n" for e in entries)
    tmp = path.parent / (path.name + ".repair")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(body)
        if fsync:
            fh.flush()
            os.fsync(fh.fileno())
    os.replace(tmp, path)


def find(entries: list[dict], kind: str) -> dict | None:
    for entry in entries:
        if entry["kind"] == kind:
            return entry
    return None
