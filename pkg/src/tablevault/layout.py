"""Canonical on-disk layout of a repository.

All paths are relative to the repository root:

    metadata/active_log/<op_id>.wal       one WAL file per live operation
    metadata/active_log/<op_id>/          operation record, backups, staging
    metadata/completed_log.jsonl          append-only event log
    metadata/locks/<target>.<op>.lock     lock records
    metadata/heartbeats/<process_id>      liveness files (mtime-based)
    metadata/archive/<table>/...          archived metadata
    metadata/lineage_index/...            downstream reverse index
    metadata/config.yaml                  repository settings
    code_modules/<name>/...               registered executable modules
    tables/<table>/description.yaml
    tables/<table>/pending_builders/<builder>.yaml
    tables/<table>/<instance_id>/data.csv
    tables/<table>/<instance_id>/schema.yaml
    tables/<table>/<instance_id>/artifacts/...
    tables/<table>/<instance_id>/builders/<builder>.yaml
    tables/<table>/<instance_id>/code/...
    tables/<table>/<instance_id>/lineage.yaml
    tables/<table>/<instance_id>/description.yaml
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path

METADATA = "metadata"
ACTIVE_LOG = "metadata/active_log"
COMPLETED_LOG = "metadata/completed_log.jsonl"
LOCKS = "metadata/locks"
HEARTBEATS = "metadata/heartbeats"
ARCHIVE = "metadata/archive"
LINEAGE_INDEX = "metadata/lineage_index"
CONFIG_FILE = "metadata/config.yaml"
CODE_MODULES = "code_modules"
TABLES = "tables"

TOP_DIRS = (METADATA, CODE_MODULES, TABLES)

# Data-bearing state: the scope of atomicity digests. Coordination state
# (logs, locks, heartbeats) is excluded by design.
STATE_DIRS = (TABLES, CODE_MODULES, ARCHIVE)


def tables_dir(root: Path) -> Path:
    return root / TABLES


def table_dir(root: Path, table: str) -> Path:
    return root / TABLES / table


def table_description(root: Path, table: str) -> Path:
    return table_dir(root, table) / "description.yaml"


def pending_builders_dir(root: Path, table: str) -> Path:
    return table_dir(root, table) / "pending_builders"


def instance_dir(root: Path, table: str, instance: str) -> Path:
    return table_dir(root, table) / instance


def instance_description(root: Path, table: str, instance: str) -> Path:
    return instance_dir(root, table, instance) / "description.yaml"


def artifacts_dir(root: Path, table: str, instance: str) -> Path:
    return instance_dir(root, table, instance) / "artifacts"


def code_modules_dir(root: Path) -> Path:
    return root / CODE_MODULES


def module_dir(root: Path, name: str) -> Path:
    return root / CODE_MODULES / name


def archive_table_dir(root: Path, table: str) -> Path:
    return root / ARCHIVE / table


def archive_instance_dir(root: Path, table: str, instance: str) -> Path:
    return root / ARCHIVE / table / instance


def active_log_dir(root: Path) -> Path:
    return root / ACTIVE_LOG


def wal_path(root: Path, op_id: str) -> Path:
    return active_log_dir(root) / f"{op_id}.wal"


def op_dir(root: Path, op_id: str) -> Path:
    return active_log_dir(root) / op_id


def completed_log(root: Path) -> Path:
    return root / COMPLETED_LOG


def locks_dir(root: Path) -> Path:
    return root / LOCKS


def heartbeats_dir(root: Path) -> Path:
    return root / HEARTBEATS


def lineage_index_dir(root: Path) -> Path:
    return root / LINEAGE_INDEX


@dataclass(frozen=True)
class RepoConfig:
    """Repository settings; persisted at creation, overridable per handle."""

    fsync: bool = True
    lock_timeout_s: float = 30.0
    heartbeat_interval_s: float = 2.0
    stale_heartbeat_s: float = 30.0
    id_scheme: str = "timestamp-v1"

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "fsync": self.fsync,
            "lock_timeout_s": self.lock_timeout_s,
            "heartbeat_interval_s": self.heartbeat_interval_s,
            "stale_heartbeat_s": self.stale_heartbeat_s,
            "id_scheme": self.id_scheme,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "RepoConfig":
        return cls(
            fsync=bool(doc.get("fsync", True)),
            lock_timeout_s=float(doc.get("lock_timeout_s", 30.0)),
            heartbeat_interval_s=float(doc.get("heartbeat_interval_s", 2.0)),
            stale_heartbeat_s=float(doc.get("stale_heartbeat_s", 30.0)),
            id_scheme=str(doc.get("id_scheme", "timestamp-v1")),
        )

    def with_env_overrides(self) -> "RepoConfig":
        cfg = self
        fsync = os.environ.get("TABLEVAULT_FSYNC")
        if fsync is not None:
            cfg = replace(cfg, fsync=fsync not in ("0", "false", ""))
        timeout = os.environ.get("TABLEVAULT_LOCK_TIMEOUT_S")
        if timeout is not None:
            cfg = replace(cfg, lock_timeout_s=float(timeout))
        stale = os.environ.get("TABLEVAULT_STALE_HEARTBEAT_S")
        if stale is not None:
            cfg = replace(cfg, stale_heartbeat_s=float(stale))
        return cfg
