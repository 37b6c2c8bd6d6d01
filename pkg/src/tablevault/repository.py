"""Repository: on-disk layout, table/instance lifecycle, visibility, archival.

A repository is a rooted directory of tables plus global metadata logs.
Tables hold immutable committed instances; an unqualified reference
always resolves to the newest committed instance. Every mutation runs as
a durable operation (module ``opexec``), externally imported data always
carries an ingestion event, and deletion removes only the dataframe and
artifacts — all metadata migrates to a queryable archive.

Reads of committed state are lock-free: commit flips a per-instance
description document atomically after the commit point, so a concurrent
reader either sees a complete committed instance or none at all.
"""

from __future__ import annotations

import os
import re
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from . import _clock, _fsio, layout, lineage, opexec
from .errors import (
    AccessDenied,
    NameConflict,
    NotFound,
    OperationPaused,
    RepositoryConflict,
    Reverted,
    StateError,
    TableVaultError,
    ValidationError,
)
from .layout import RepoConfig
from .opexec import EXCLUSIVE, SHARED, instance_target, module_target, table_target
from .tabular import TabularData

TABLE_NAME = re.compile(r"^[a-z][a-z0-9_\-]*$")
MODULE_NAME = re.compile(r"^[a-z_][a-z0-9_]*$")
BUILDER_NAME = re.compile(r"^[a-z][a-z0-9_\-]*$")
MAX_NAME_LEN = 128

FACETS = ("description", "lineage", "builders", "code", "operations", "ingestion")


@dataclass(frozen=True)
class ArchiveReceipt:
    op_id: str
    table: str
    instances: tuple[str, ...]
    archive_path: str
    archived_at: str


@dataclass(frozen=True)
class TableHandle:
    name: str
    path: Path


def _validate_name(name: str, pattern: re.Pattern, what: str) -> None:
    if not isinstance(name, str) or len(name) > MAX_NAME_LEN or not pattern.match(name):
        raise ValidationError(f"invalid {what} name {name!r}")


class Repository:
    """Handle to a repository; one author identity per handle.

    Safe for concurrent use from multiple processes (coordination is
    entirely on disk); within one process each API call is serialized per
    handle. Operation control (pause/resume/stop, status) bypasses the
    handle lock so a long execution can be interrupted from another
    thread or process.
    """

    def __init__(
        self,
        path: str | Path,
        author: str,
        create: bool = True,
        config: RepoConfig | None = None,
        **overrides,
    ):
        if not author or not isinstance(author, str):
            raise ValidationError("author id is required")
        self.root = Path(path).absolute()
        self.author = author
        self._api_lock = threading.RLock()
        self._last_op_id: str | None = None
        created = self._open_or_create(create, config, overrides)
        self._heartbeat = opexec.HeartbeatDaemon(self.root, self.cfg.heartbeat_interval_s)
        self._heartbeat.start()
        self.last_recovery = opexec.recover(self.root, self.cfg)
        if created:
            opexec.log_event(
                self.root,
                {
                    "event": "committed",
                    "op_id": _clock.new_op_id(),
                    "op_type": "init_repository",
                    "author": author,
                    "targets": [],
                },
                fsync=self.cfg.fsync,
            )

    def _open_or_create(self, create: bool, config: RepoConfig | None, overrides) -> bool:
        config_path = self.root / layout.CONFIG_FILE
        if self.root.exists() and not self.root.is_dir():
            raise RepositoryConflict(f"{self.root} exists and is not a directory")
        if config_path.exists():
            cfg = RepoConfig.from_doc(_fsio.read_yaml(config_path))
            self.cfg = replace(cfg.with_env_overrides(), **overrides)
            self._ensure_layout()
            return False
        if self.root.exists() and any(self.root.iterdir()):
            raise RepositoryConflict(
                f"{self.root} is non-empty and not a repository"
            )
        if not create:
            raise NotFound(f"no repository at {self.root}")
        cfg = config or RepoConfig()
        self.cfg = replace(cfg.with_env_overrides(), **overrides)
        _fsio.ensure_dir(self.root)
        # config.yaml is the repository marker; write it first so a crash
        # mid-creation leaves an openable repository, then fill the layout
        _fsio.write_yaml(config_path, cfg.to_doc(), fsync=self.cfg.fsync)
        self._ensure_layout()
        return True

    def _ensure_layout(self) -> None:
        for rel in (
            layout.TABLES,
            layout.CODE_MODULES,
            layout.ACTIVE_LOG,
            layout.LOCKS,
            layout.HEARTBEATS,
            layout.ARCHIVE,
            layout.LINEAGE_INDEX,
        ):
            _fsio.ensure_dir(self.root / rel)

    def close(self) -> None:
        self._heartbeat.stop()

    def __enter__(self) -> "Repository":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def last_op_id(self) -> str | None:
        return self._last_op_id

    # -- low-level state reads (lock-free, committed visibility) -----------

    def _table_doc(self, table: str) -> dict | None:
        path = layout.table_description(self.root, table)
        try:
            return _fsio.read_yaml(path)
        except FileNotFoundError:
            return None

    def table_exists(self, table: str) -> bool:
        return self._table_doc(table) is not None

    def _instance_doc(self, table: str, instance: str) -> dict | None:
        path = layout.instance_description(self.root, table, instance)
        try:
            return _fsio.read_yaml(path)
        except FileNotFoundError:
            return None

    def _instance_ids(self, table: str) -> list[str]:
        base = layout.table_dir(self.root, table)
        if not base.exists():
            return []
        out = []
        for name in sorted(os.listdir(base)):
            if (base / name).is_dir() and name not in ("pending_builders",):
                out.append(name)
        return out

    def committed_instances(self, table: str) -> list[str]:
        out = []
        for iid in self._instance_ids(table):
            doc = self._instance_doc(table, iid)
            if doc and doc.get("status") == "committed":
                out.append(iid)
        return out

    def latest_committed(self, table: str) -> str | None:
        ids = self.committed_instances(table)
        return ids[-1] if ids else None

    def _find_temp_instance(self, table: str, external: bool) -> str | None:
        for iid in reversed(self._instance_ids(table)):
            doc = self._instance_doc(table, iid)
            if (
                doc
                and doc.get("status") == "temporary"
                and bool(doc.get("external")) == external
            ):
                return iid
        return None

    def list_tables(self) -> list[str]:
        base = layout.tables_dir(self.root)
        if not base.exists():
            return []
        return [
            name
            for name in sorted(os.listdir(base))
            if self._table_doc(name) is not None
        ]

    def authors(self) -> set[str]:
        """Every author id seen in the event log and live operations."""
        seen = {self.author}
        for event in opexec.read_events(self.root):
            if event.get("author"):
                seen.add(event["author"])
        for op_id in opexec.list_active(self.root):
            record = opexec.read_record(self.root, op_id)
            if record and record.get("author"):
                seen.add(record["author"])
        return seen

    def list_instances(self, table: str, caller: str | None = None) -> list[dict]:
        if not self.table_exists(table):
            raise NotFound(f"table {table!r} does not exist")
        caller = caller or self.author
        out = []
        for iid in self._instance_ids(table):
            doc = self._instance_doc(table, iid)
            if doc is None:
                continue
            if doc.get("status") == "temporary" and doc.get("author") != caller:
                continue
            out.append(
                {
                    "instance_id": iid,
                    "status": doc.get("status"),
                    "external": bool(doc.get("external")),
                    "created_at": doc.get("created_at"),
                    "author": doc.get("author"),
                }
            )
        return out

    # -- operation wrapper ---------------------------------------------------

    def _mutate(
        self,
        op_type: str,
        targets: list[tuple[str, str]],
        body,
        checks=None,
        author: str | None = None,
        payload: dict | None = None,
        parent: str | None = None,
    ):
        with self._api_lock:
            op = opexec.begin(
                self.root,
                self.cfg,
                author or self.author,
                op_type,
                targets,
                parent=parent,
                payload=payload,
            )
            self._last_op_id = op.op_id
            try:
                result = body(op)
                op.validate_and_commit(checks(op, result) if checks else [])
                return result
            except opexec.PauseRequested:
                raise OperationPaused(op.op_id)
            except (Reverted, OperationPaused):
                raise
            except TableVaultError as exc:
                op.revert(f"{type(exc).__name__}: {exc}")
                raise
            except Exception as exc:
                op.revert(f"{type(exc).__name__}: {exc}")
                raise

    # -- table lifecycle -------------------------------------------------------

    def create_table(
        self, name: str, description: str = "", allow_external: bool = True
    ) -> TableHandle:
        _validate_name(name, TABLE_NAME, "table")
        if self.table_exists(name):
            raise NameConflict(f"table {name!r} already exists")

        def body(op):
            if self.table_exists(name):
                raise NameConflict(f"table {name!r} already exists")
            doc = {
                "format_version": _fsio.FORMAT_VERSION,
                "table": name,
                "description": description,
                "allow_external": bool(allow_external),
                "created_at": _clock.iso(),
                "author": self.author,
            }
            op.stage_finalize(f"{layout.TABLES}/{name}/description.yaml", _fsio.yaml_bytes(doc))
            return TableHandle(name=name, path=layout.table_dir(self.root, name))

        return self._mutate(
            "create_table",
            [(table_target(name), EXCLUSIVE)],
            body,
            payload={"table": name},
        )

    def create_instance(self, table: str, external: bool = False) -> str:
        if not self.table_exists(table):
            raise NotFound(f"table {table!r} does not exist")
        iid = _clock.new_instance_id()
        targets = [(table_target(table), SHARED), (instance_target(table, iid), EXCLUSIVE)]
        if external:
            # serializes external creations: at most one pending external
            # instance per table
            targets.append((instance_target(table, "pending_external"), EXCLUSIVE))

        def body(op):
            tdoc = self._table_doc(table)
            if tdoc is None:
                raise NotFound(f"table {table!r} does not exist")
            if external and not tdoc.get("allow_external", True):
                raise ValidationError(f"table {table!r} does not allow external writes")
            if external and self._find_temp_instance(table, external=True):
                raise StateError(
                    f"table {table!r} already has a pending external instance"
                )
            op.ensure_dir(f"{layout.TABLES}/{table}/{iid}/artifacts")
            doc = {
                "format_version": _fsio.FORMAT_VERSION,
                "table": table,
                "instance_id": iid,
                "status": "temporary",
                "external": bool(external),
                "author": self.author,
                "created_at": _clock.iso(),
                "description": "",
            }
            op.stage_finalize(
                f"{layout.TABLES}/{table}/{iid}/description.yaml", _fsio.yaml_bytes(doc)
            )
            return iid

        return self._mutate(
            "create_instance",
            targets,
            body,
            payload={"table": table, "instance": iid, "external": bool(external)},
        )

    # -- external ingestion ------------------------------------------------------

    @staticmethod
    def _normalize_artifacts(artifacts) -> dict[str, bytes]:
        if artifacts is None:
            return {}
        if isinstance(artifacts, dict):
            out = dict(artifacts)
        else:
            base = Path(artifacts)
            if not base.is_dir():
                raise ValidationError(f"artifact directory {base} does not exist")
            out = {
                p.relative_to(base).as_posix(): p.read_bytes()
                for p in _fsio.walk_files(base)
            }
        for name in out:
            parts = Path(name).parts
            if Path(name).is_absolute() or ".." in parts:
                raise ValidationError(f"invalid artifact name {name!r}")
        return out

    def write_instance(
        self,
        frame: TabularData,
        table: str,
        description: str = "",
        artifacts=None,
        source_note: str | None = None,
    ) -> str:
        if not self.table_exists(table):
            raise NotFound(f"table {table!r} does not exist")
        frame.validate(None)
        files = self._normalize_artifacts(artifacts)
        for name, dtype in frame.columns:
            if dtype != "artifact_string":
                continue
            for value in frame.column_values(name):
                if value not in files:
                    raise ValidationError(
                        f"artifact_string {value!r} has no matching artifact file"
                    )
        iid = self._find_temp_instance(table, external=True)
        if iid is None:
            raise StateError(
                f"table {table!r} has no pending external instance; "
                "call create_instance(..., external=True) first"
            )
        inst_rel = f"{layout.TABLES}/{table}/{iid}"

        def body(op):
            doc = self._instance_doc(table, iid)
            if doc is None or doc.get("status") != "temporary" or not doc.get("external"):
                raise StateError(f"instance {table}@{iid} is not a pending external instance")
            for name in sorted(files):
                op.stage_write(f"{inst_rel}/artifacts/{name}", files[name])
            op.stage_write(f"{inst_rel}/data.csv", frame.to_csv_bytes())
            op.stage_write(f"{inst_rel}/schema.yaml", _fsio.yaml_bytes(frame.schema_doc()))
            digest = frame.data_digest(layout.artifacts_dir(self.root, table, iid))
            ingestion = {
                "author": self.author,
                "timestamp": _clock.iso(),
                "description": description,
                "digest": digest,
                "source_note": source_note,
            }
            chain = [op.op_id] + opexec.author_chain(self.root, self.author)
            lineage.record_lineage(
                op,
                table,
                iid,
                edges=[],
                author_chain=chain,
                ingestion=ingestion,
                is_committed=self.is_committed,
            )
            committed = dict(doc)
            committed.update(
                status="committed",
                description=description,
                committed_at=_clock.iso(),
                data_digest=digest,
                op_id=op.op_id,
            )
            op.stage_finalize(f"{inst_rel}/description.yaml", _fsio.yaml_bytes(committed))
            op.add_action(
                {
                    "kind": "log_event",
                    "event": {
                        "event": "ingestion",
                        "op_id": op.op_id,
                        "table": table,
                        "instance": iid,
                        "author": self.author,
                        "description": description,
                        "digest": digest,
                        "targets": [{"target": instance_target(table, iid), "mode": "exclusive"}],
                    },
                }
            )
            return iid

        def checks(op, result):
            def frame_integrity():
                stored = self._read_frame_files(table, iid)
                stored.validate(layout.artifacts_dir(self.root, table, iid))

            return [("frame_integrity", frame_integrity)]

        return self._mutate(
            "write_instance",
            [
                (table_target(table), SHARED),
                (instance_target(table, iid), EXCLUSIVE),
            ],
            body,
            checks=checks,
            payload={"table": table, "instance": iid},
        )

    # -- reads -------------------------------------------------------------------

    def _read_frame_files(self, table: str, instance: str) -> TabularData:
        inst = layout.instance_dir(self.root, table, instance)
        try:
            schema = _fsio.read_yaml(inst / "schema.yaml")
            data = (inst / "data.csv").read_bytes()
        except FileNotFoundError:
            raise NotFound(f"instance {table}@{instance} has no dataframe")
        return TabularData.from_csv_bytes(data, schema)

    def get_dataframe(
        self, table: str, instance_id: str | None = None, caller: str | None = None
    ) -> TabularData:
        caller = caller or self.author
        if not self.table_exists(table):
            raise NotFound(f"table {table!r} does not exist")
        if instance_id is None:
            instance_id = self.latest_committed(table)
            if instance_id is None:
                raise NotFound(f"table {table!r} has no committed instance")
        doc = self._instance_doc(table, instance_id)
        if doc is None:
            raise NotFound(f"instance {table}@{instance_id} does not exist")
        if doc.get("status") == "temporary" and doc.get("author") != caller:
            raise AccessDenied(
                f"instance {table}@{instance_id} is in progress and only "
                "readable by its author"
            )
        return self._read_frame_files(table, instance_id)

    def is_committed(self, table: str, instance: str) -> bool:
        doc = self._instance_doc(table, instance)
        return bool(doc and doc.get("status") == "committed")

    # -- deletion / archival --------------------------------------------------------

    @staticmethod
    def _archive_instance_actions(table: str, iid: str) -> list[dict]:
        live = f"{layout.TABLES}/{table}/{iid}"
        partial = f"{layout.ARCHIVE}/{table}/{iid}.partial"
        final = f"{layout.ARCHIVE}/{table}/{iid}"
        return [
            {"kind": "move_dir", "src": live, "dst": partial},
            {"kind": "remove_file", "path": f"{partial}/data.csv"},
            {"kind": "remove_dir", "path": f"{partial}/artifacts"},
            {"kind": "move_dir", "src": partial, "dst": final},
        ]

    def delete_instance(self, table: str, instance_id: str) -> ArchiveReceipt:
        doc = self._instance_doc(table, instance_id)
        if doc is None:
            raise NotFound(f"instance {table}@{instance_id} does not exist")
        if doc.get("status") != "committed":
            raise StateError(f"instance {table}@{instance_id} is not committed")

        def body(op):
            current = self._instance_doc(table, instance_id)
            if current is None:
                raise NotFound(f"instance {table}@{instance_id} does not exist")
            if current.get("status") != "committed":
                raise StateError(f"instance {table}@{instance_id} is not committed")
            for action in self._archive_instance_actions(table, instance_id):
                op.add_action(action)
            return ArchiveReceipt(
                op_id=op.op_id,
                table=table,
                instances=(instance_id,),
                archive_path=f"{layout.ARCHIVE}/{table}/{instance_id}",
                archived_at=_clock.iso(),
            )

        return self._mutate(
            "delete_instance",
            [
                (table_target(table), SHARED),
                (instance_target(table, instance_id), EXCLUSIVE),
            ],
            body,
            payload={"table": table, "instance": instance_id},
        )

    def delete_table(self, table: str) -> ArchiveReceipt:
        if not self.table_exists(table):
            raise NotFound(f"table {table!r} does not exist")

        def body(op):
            if not self.table_exists(table):
                raise NotFound(f"table {table!r} does not exist")
            instances = tuple(self._instance_ids(table))
            stamp = _clock.compact(_clock.now())
            for iid in instances:
                for action in self._archive_instance_actions(table, iid):
                    op.add_action(action)
            records = f"{layout.ARCHIVE}/{table}/table_records"
            op.add_action(
                {
                    "kind": "move_file",
                    "src": f"{layout.TABLES}/{table}/description.yaml",
                    "dst": f"{records}/{stamp}.yaml",
                }
            )
            op.add_action(
                {
                    "kind": "move_dir",
                    "src": f"{layout.TABLES}/{table}/pending_builders",
                    "dst": f"{records}/{stamp}.builders",
                }
            )
            op.add_action({"kind": "remove_dir", "path": f"{layout.TABLES}/{table}"})
            return ArchiveReceipt(
                op_id=op.op_id,
                table=table,
                instances=instances,
                archive_path=f"{layout.ARCHIVE}/{table}",
                archived_at=_clock.iso(),
            )

        return self._mutate(
            "delete_table",
            [(table_target(table), EXCLUSIVE)],
            body,
            payload={"table": table},
        )

    # -- builder and code-module documents ----------------------------------------------

    def create_builder_file(self, table: str, builder_name: str) -> Path:
        if not self.table_exists(table):
            raise NotFound(f"table {table!r} does not exist")
        _validate_name(builder_name, BUILDER_NAME, "builder")
        rel = f"{layout.TABLES}/{table}/pending_builders/{builder_name}.yaml"
        if (self.root / rel).exists():
            raise NameConflict(f"builder {builder_name!r} already exists on {table!r}")

        def body(op):
            if (self.root / rel).exists():
                raise NameConflict(f"builder {builder_name!r} already exists on {table!r}")
            op.stage_write(rel, b"")
            return self.root / rel

        return self._mutate(
            "create_builder_file",
            [
                (table_target(table), SHARED),
                (instance_target(table, "pending_builders"), EXCLUSIVE),
            ],
            body,
            payload={"table": table, "builder": builder_name},
        )

    def builder_path(self, table: str, builder_name: str) -> Path:
        path = layout.pending_builders_dir(self.root, table) / f"{builder_name}.yaml"
        if not path.exists():
            raise NotFound(f"builder {builder_name!r} not found on {table!r}")
        return path

    def create_code_module(self, name: str) -> Path:
        _validate_name(name, MODULE_NAME, "code module")
        target = layout.module_dir(self.root, name)
        if target.exists():
            raise NameConflict(f"code module {name!r} already exists")

        def body(op):
            if target.exists():
                raise NameConflict(f"code module {name!r} already exists")
            op.stage_write(f"{layout.CODE_MODULES}/{name}/{name}.py", b"")
            return target / f"{name}.py"

        return self._mutate(
            "create_code_module",
            [(module_target(name), EXCLUSIVE)],
            body,
            payload={"module": name},
        )

    def list_code_modules(self) -> list[str]:
        base = layout.code_modules_dir(self.root)
        if not base.exists():
            return []
        return sorted(n for n in os.listdir(base) if (base / n).is_dir())

    # -- metadata queries -----------------------------------------------------------------

    def query_metadata(
        self,
        table: str,
        facet: str,
        instance_id: str | None = None,
        archived: bool = False,
        name: str | None = None,
        caller: str | None = None,
    ) -> Any:
        """Structured metadata read; the query itself is logged with its caller."""
        caller = caller or self.author
        if facet not in FACETS:
            raise NotFound(f"unknown metadata facet {facet!r}")
        doc = self._query_metadata_impl(table, facet, instance_id, archived, name)
        opexec.log_event(
            self.root,
            {
                "event": "query",
                "author": caller,
                "selector": {
                    "table": table,
                    "instance": instance_id,
                    "facet": facet,
                    "name": name,
                    "archived": archived,
                },
            },
            fsync=self.cfg.fsync,
        )
        return doc

    def _instance_meta_dir(self, table: str, instance: str, archived: bool) -> Path:
        if archived:
            path = layout.archive_instance_dir(self.root, table, instance)
        else:
            path = layout.instance_dir(self.root, table, instance)
        if not path.exists():
            raise NotFound(
                f"{'archived ' if archived else ''}instance {table}@{instance} not found"
            )
        return path

    def _query_metadata_impl(
        self, table: str, facet: str, instance_id: str | None, archived: bool, name: str | None
    ) -> Any:
        if facet == "operations":
            events = []
            for event in opexec.read_events(self.root):
                targets = event.get("targets") or []
                for t in targets:
                    target = t.get("target", "")
                    if target == f"table/{table}" or target.startswith(f"table/{table}/"):
                        if instance_id and not target.startswith(
                            f"table/{table}/{instance_id}"
                        ):
                            continue
                        events.append(event)
                        break
            return events
        if facet == "description" and instance_id is None and not archived:
            doc = self._table_doc(table)
            if doc is None:
                raise NotFound(f"table {table!r} does not exist")
            return doc
        if instance_id is None:
            if archived:
                raise NotFound("archived queries need an explicit instance id")
            instance_id = self.latest_committed(table)
            if instance_id is None:
                raise NotFound(f"table {table!r} has no committed instance")
        base = self._instance_meta_dir(table, instance_id, archived)
        if facet == "description":
            try:
                return _fsio.read_yaml(base / "description.yaml")
            except FileNotFoundError:
                raise NotFound(f"no description for {table}@{instance_id}")
        if facet in ("lineage", "ingestion"):
            try:
                doc = _fsio.read_yaml(base / "lineage.yaml")
            except FileNotFoundError:
                raise NotFound(f"no lineage recorded for {table}@{instance_id}")
            if facet == "ingestion":
                return doc.get("ingestion")
            return doc
        if facet == "builders":
            bdir = base / "builders"
            if name is not None:
                path = bdir / f"{name}.yaml"
                if not path.exists():
                    raise NotFound(f"no builder {name!r} on {table}@{instance_id}")
                return path.read_text("utf-8")
            if not bdir.exists():
                return {}
            return {
                p.stem: p.read_text("utf-8")
                for p in sorted(bdir.glob("*.yaml"))
            }
        if facet == "code":
            cdir = base / "code"
            if not cdir.exists():
                return {}
            return {
                p.relative_to(cdir).as_posix(): p.read_text("utf-8")
                for p in _fsio.walk_files(cdir)
            }
        raise NotFound(f"unknown metadata facet {facet!r}")

    # -- execution, lineage, operations ------------------------------------------------------

    def execute_instance(self, table: str, caller: str | None = None, registry=None) -> str:
        from . import builders

        with self._api_lock:
            return builders.execute_instance(self, table, caller=caller, registry=registry)

    def validate_builder(self, table: str, builder_name: str) -> dict:
        from . import builders

        path = self.builder_path(table, builder_name)
        spec = builders.load_builder(path.read_text("utf-8"), builder_name)
        return spec.summary()

    def trace_lineage(
        self,
        table: str,
        instance_id: str,
        direction: str = "upstream",
        depth: int | None = None,
    ) -> dict:
        return lineage.trace(self.root, table, instance_id, direction, depth)

    def operations(self) -> list[dict]:
        out = []
        for op_id in opexec.list_active(self.root):
            record = opexec.read_record(self.root, op_id)
            if record is not None:
                out.append(
                    {
                        "op_id": op_id,
                        "state": record.get("state"),
                        "op_type": record.get("op_type"),
                        "author": record.get("author"),
                    }
                )
        for event in opexec.read_events(self.root):
            if event.get("event") in ("committed", "reverted"):
                out.append(
                    {
                        "op_id": event.get("op_id"),
                        "state": event["event"],
                        "op_type": event.get("op_type"),
                        "author": event.get("author"),
                    }
                )
        return out

    def operation_status(self, op_id: str) -> dict:
        record = opexec.read_record(self.root, op_id)
        if record is not None:
            return record
        for event in opexec.read_events(self.root):
            if event.get("op_id") == op_id and event.get("event") in ("committed", "reverted"):
                record = dict(event.get("record") or {})
                record.setdefault("op_id", op_id)
                record["state"] = event["event"]
                return record
        raise NotFound(f"unknown operation {op_id}")

    def pause_operation(self, op_id: str, author: str | None = None) -> dict:
        return opexec.pause(self.root, self.cfg, op_id, author or self.author)

    def resume_operation(self, op_id: str, author: str | None = None, registry=None) -> Any:
        from . import builders

        record = opexec.read_record(self.root, op_id)
        if record is None:
            raise NotFound(f"no active operation {op_id}")
        opexec.mark_resumed(self.root, self.cfg, op_id, author or self.author)
        with self._api_lock:
            if record.get("op_type") == "execute_instance":
                return builders.resume_execute(self, op_id, registry=registry)
            op = opexec.adopt(self.root, self.cfg, op_id)
            op.validate_and_commit([])
            return op_id

    def stop_operation(
        self, op_id: str, author: str | None = None, revert: bool = True, registry=None
    ) -> dict:
        from . import builders

        record = opexec.request_stop(self.root, self.cfg, op_id, author or self.author, revert)
        if not record.pop("_was_paused", False):
            # a live runner will honor the request at its next poll
            return {"op_id": op_id, "state": "stop_requested", "revert": revert}
        with self._api_lock:
            op = opexec.adopt(self.root, self.cfg, op_id)
            if revert:
                op.revert("stopped by author")
                return {"op_id": op_id, "state": "reverted"}
            if record.get("op_type") == "execute_instance":
                try:
                    builders.finish_from_ledger(self, op)
                    return {"op_id": op_id, "state": "committed"}
                except Reverted:
                    return {"op_id": op_id, "state": "reverted"}
            op.validate_and_commit([])
            return {"op_id": op_id, "state": "committed"}

    def recover(self) -> opexec.RecoveryReport:
        return opexec.recover(self.root, self.cfg)

    # -- resolver view ------------------------------------------------------------

    def view(self) -> "_CommittedView":
        return _CommittedView(self)

    # -- integrity ----------------------------------------------------------------

    def state_digest(self) -> str:
        """Digest over data-bearing state: tables, code modules, archive."""
        return _fsio.tree_digest(self.root, list(layout.STATE_DIRS))

    def audit(self) -> list[str]:
        """Repository-wide invariant walk; returns human-readable violations."""
        problems: list[str] = []
        allowed = {layout.TABLES, layout.CODE_MODULES, layout.METADATA.split("/")[0]}
        for entry in sorted(os.listdir(self.root)):
            if (self.root / entry).is_dir():
                if entry not in allowed:
                    problems.append(f"unexpected top-level directory {entry!r}")
            elif entry not in (".gitignore",):
                problems.append(f"unexpected top-level file {entry!r}")
        for table in self.list_tables():
            for iid in self.committed_instances(table):
                inst = layout.instance_dir(self.root, table, iid)
                for required in ("data.csv", "schema.yaml", "description.yaml", "lineage.yaml"):
                    if not (inst / required).exists():
                        problems.append(f"{table}@{iid}: missing {required}")
                try:
                    doc = _fsio.read_yaml(inst / "lineage.yaml")
                except FileNotFoundError:
                    continue
                has_builders = (inst / "builders").exists() and any(
                    (inst / "builders").glob("*.yaml")
                )
                has_ingestion = bool(doc.get("ingestion"))
                if not has_builders and not has_ingestion:
                    problems.append(
                        f"{table}@{iid}: neither builder snapshots nor an ingestion event"
                    )
                chain = doc.get("author_chain") or []
                if not chain:
                    problems.append(f"{table}@{iid}: empty author chain")
                elif _clock.is_op_id(chain[-1]):
                    problems.append(f"{table}@{iid}: author chain ends at an operation")
        return problems


class _CommittedView:
    """Resolver-facing view over committed repository state."""

    def __init__(self, repo: Repository):
        self._repo = repo

    def latest_committed(self, table: str) -> str | None:
        return self._repo.latest_committed(table)

    def is_committed(self, table: str, instance: str) -> bool:
        return self._repo.is_committed(table, instance)

    def frame(self, table: str, instance: str) -> TabularData:
        if not self.is_committed(table, instance):
            raise NotFound(f"instance {table}@{instance} is not committed")
        return self._repo._read_frame_files(table, instance)

    def artifact_root(self, table: str, instance: str) -> Path:
        return layout.artifacts_dir(self._repo.root, table, instance)

    def metadata(self, table: str, instance: str | None, facet: tuple[str, ...]) -> Any:
        name = facet[1] if len(facet) > 1 else None
        return self._repo.query_metadata(
            table, facet[0], instance_id=instance, name=name
        )


def init_repository(path: str | Path, author: str, **kwargs) -> Repository:
    """Create a repository at ``path``, or open it when one already exists."""
    return Repository(path, author, create=True, **kwargs)
