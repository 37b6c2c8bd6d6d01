"""Command-line frontend.

Every library operation is reachable through exactly one subcommand.
Mutating subcommands print the resulting operation id; ``--json`` emits a
single JSON document on stdout and keeps human diagnostics on stderr.

Exit codes: 0 success, 2 validation, 3 not found, 4 busy/lock timeout,
5 reverted, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import (
    AccessDenied,
    Busy,
    NotFound,
    OperationPaused,
    Reverted,
    TableVaultError,
    ValidationError,
)
from .repository import Repository
from .tabular import TabularData
from . import _fsio

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
EXIT_NOT_FOUND = 3
EXIT_BUSY = 4
EXIT_REVERTED = 5

# Subcommand -> Repository method; the parity test enforces that this map
# covers the public API exactly once.
PARITY = {
    "init": "__init__",
    "table create": "create_table",
    "table delete": "delete_table",
    "table list": "list_tables",
    "instance create": "create_instance",
    "instance delete": "delete_instance",
    "instance list": "list_instances",
    "instance show": "query_metadata:description",
    "builder create": "create_builder_file",
    "builder edit-path": "builder_path",
    "builder validate": "validate_builder",
    "module create": "create_code_module",
    "module list": "list_code_modules",
    "execute": "execute_instance",
    "write": "write_instance",
    "df get": "get_dataframe",
    "meta query": "query_metadata",
    "lineage trace": "trace_lineage",
    "op list": "operations",
    "op status": "operation_status",
    "op pause": "pause_operation",
    "op resume": "resume_operation",
    "op stop": "stop_operation",
    "recover": "recover",
}


def _error_kind(exc: TableVaultError) -> tuple[str, int]:
    if isinstance(exc, Busy):
        return "busy", EXIT_BUSY
    if isinstance(exc, Reverted):
        return "reverted", EXIT_REVERTED
    if isinstance(exc, NotFound):
        return "not_found", EXIT_NOT_FOUND
    if isinstance(exc, (ValidationError, AccessDenied)):
        return "validation", EXIT_VALIDATION
    return "internal", EXIT_INTERNAL


class _Output:
    def __init__(self, as_json: bool):
        self.as_json = as_json

    def emit(self, doc: dict, human: str | None = None) -> None:
        if self.as_json:
            doc = dict(doc)
            doc.setdefault("format_version", 1)
            print(json.dumps(doc, sort_keys=True, default=str))
        else:
            print(human if human is not None else json.dumps(doc, sort_keys=True, default=str))

    def error(self, kind: str, detail: str) -> None:
        if self.as_json:
            print(json.dumps({"error": {"kind": kind, "detail": detail}}))
        print(f"error ({kind}): {detail}", file=sys.stderr)


def _common_flags(parser: argparse.ArgumentParser, root: bool) -> None:
    # the same flags exist on the root parser and on every leaf so they
    # may appear before or after the subcommand; leaf copies use SUPPRESS
    # so they never clobber a value parsed at the root
    default = dict(default=argparse.SUPPRESS) if not root else {}
    parser.add_argument(
        "--repo",
        "-r",
        **(default or {"default": os.environ.get("TABLEVAULT_REPO")}),
        help="repository path (or set TABLEVAULT_REPO)" if root else argparse.SUPPRESS,
    )
    parser.add_argument(
        "--author",
        "-a",
        **(default or {"default": None}),
        help="author id; required for mutations" if root else argparse.SUPPRESS,
    )
    parser.add_argument(
        "--json",
        action="store_true",
        **(default or {"default": False}),
        help="machine-readable output" if root else argparse.SUPPRESS,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tablevault",
        description="Metadata governance vault for collaborative data workflows.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common_flags(parser, root=True)
    sub = parser.add_subparsers(dest="group", required=True)
    leaves: list[argparse.ArgumentParser] = []

    def leaf(group, name: str) -> argparse.ArgumentParser:
        p = group.add_parser(name)
        leaves.append(p)
        return p

    leaves.append(sub.add_parser("init", help="create a repository (or open an existing one)"))

    table = sub.add_parser("table", help="table lifecycle").add_subparsers(
        dest="cmd", required=True
    )
    p = leaf(table, "create")
    p.add_argument("name")
    p.add_argument("--description", default="")
    p.add_argument("--no-external", action="store_true", help="forbid external writes")
    leaf(table, "delete").add_argument("name")
    leaf(table, "list")

    inst = sub.add_parser("instance", help="instance lifecycle").add_subparsers(
        dest="cmd", required=True
    )
    p = leaf(inst, "create")
    p.add_argument("table")
    p.add_argument("--external", action="store_true")
    p = leaf(inst, "delete")
    p.add_argument("table")
    p.add_argument("instance_id")
    leaf(inst, "list").add_argument("table")
    p = leaf(inst, "show")
    p.add_argument("table")
    p.add_argument("instance_id", nargs="?")

    builder = sub.add_parser("builder", help="builder documents").add_subparsers(
        dest="cmd", required=True
    )
    for name in ("create", "edit-path", "validate"):
        p = leaf(builder, name)
        p.add_argument("table")
        p.add_argument("name")

    module = sub.add_parser("module", help="code modules").add_subparsers(
        dest="cmd", required=True
    )
    leaf(module, "create").add_argument("name")
    leaf(module, "list")

    p = sub.add_parser("execute", help="run staged builders into a committed instance")
    p.add_argument("table")
    leaves.append(p)

    p = sub.add_parser("write", help="import external data with an ingestion record")
    p.add_argument("table")
    p.add_argument("--csv", required=True, help="CSV file to import")
    p.add_argument("--schema", help="YAML schema (dtypes, primary key); inferred if omitted")
    p.add_argument("--artifacts", help="directory of artifact files")
    p.add_argument("--description", required=True)
    leaves.append(p)

    df = sub.add_parser("df", help="dataframes").add_subparsers(dest="cmd", required=True)
    p = leaf(df, "get")
    p.add_argument("table")
    p.add_argument("--instance")

    meta = sub.add_parser("meta", help="metadata queries").add_subparsers(
        dest="cmd", required=True
    )
    p = leaf(meta, "query")
    p.add_argument("table")
    p.add_argument("--facet", required=True)
    p.add_argument("--instance")
    p.add_argument("--name")
    p.add_argument("--archived", action="store_true")

    lin = sub.add_parser("lineage", help="lineage graphs").add_subparsers(
        dest="cmd", required=True
    )
    p = leaf(lin, "trace")
    p.add_argument("table")
    p.add_argument("instance_id")
    p.add_argument("--direction", choices=["upstream", "downstream"], default="upstream")
    p.add_argument("--depth", type=int)

    op = sub.add_parser("op", help="operation control").add_subparsers(
        dest="cmd", required=True
    )
    leaf(op, "list")
    leaf(op, "status").add_argument("op_id")
    leaf(op, "pause").add_argument("op_id")
    leaf(op, "resume").add_argument("op_id")
    p = leaf(op, "stop")
    p.add_argument("op_id")
    p.add_argument("--no-revert", action="store_true", help="commit if valid instead")

    leaves.append(sub.add_parser("recover", help="resolve orphaned operations"))
    for p in leaves:
        _common_flags(p, root=False)
    return parser


def _infer_schema(rows: list[list[str]], header: list[str]) -> list[tuple[str, str]]:
    def column_dtype(values: list[str]) -> str:
        if values and all(v in ("true", "false") for v in values):
            return "bool"
        try:
            for v in values:
                int(v)
            return "int" if values else "string"
        except ValueError:
            pass
        try:
            for v in values:
                float(v)
            return "float" if values else "string"
        except ValueError:
            pass
        return "string"

    return [
        (name, column_dtype([row[i] for row in rows])) for i, name in enumerate(header)
    ]


def _load_csv_frame(csv_path: str, schema_path: str | None) -> TabularData:
    import csv as csvmod
    import io

    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csvmod.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{csv_path} is empty")
        rows = [list(r) for r in reader]
    if schema_path:
        schema = _fsio.read_yaml(Path(schema_path))
        columns = [(c["name"], c["dtype"]) for c in schema["columns"]]
        primary_key = schema.get("primary_key") or None
    else:
        columns = _infer_schema(rows, header)
        primary_key = None
    schema_doc = TabularData(columns=columns, rows=[], primary_key=primary_key).schema_doc()
    # round through the canonical reader so dtype parsing stays uniform
    buf = io.StringIO()
    writer = csvmod.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return TabularData.from_csv_bytes(buf.getvalue().encode("utf-8"), schema_doc)


def _require_author(args) -> str:
    if not args.author:
        raise ValidationError("--author is required for this command")
    return args.author


def _open_repo(args, need_author: bool = True) -> Repository:
    if not args.repo:
        raise ValidationError("--repo (or TABLEVAULT_REPO) is required")
    author = args.author if args.author else ("anonymous" if not need_author else None)
    if need_author:
        author = _require_author(args)
    return Repository(args.repo, author, create=args.group == "init")


def _dispatch(args, out: _Output) -> int:
    group = args.group
    cmd = getattr(args, "cmd", None)

    if group == "init":
        repo = Repository(args.repo, _require_author(args), create=True)
        out.emit({"repo": str(repo.root)}, f"repository at {repo.root}")
        repo.close()
        return EXIT_OK

    mutating = (
        (group, cmd)
        in {
            ("table", "create"),
            ("table", "delete"),
            ("instance", "create"),
            ("instance", "delete"),
            ("builder", "create"),
            ("module", "create"),
            ("execute", None),
            ("write", None),
            ("op", "pause"),
            ("op", "resume"),
            ("op", "stop"),
        }
    )
    repo = _open_repo(args, need_author=mutating or group in ("meta",))
    try:
        return _run_command(args, repo, out, group, cmd)
    finally:
        repo.close()


def _run_command(args, repo: Repository, out: _Output, group: str, cmd: str | None) -> int:
    if group == "table":
        if cmd == "create":
            handle = repo.create_table(
                args.name, description=args.description, allow_external=not args.no_external
            )
            out.emit(
                {"op_id": repo.last_op_id, "table": handle.name},
                f"{repo.last_op_id} created table {handle.name}",
            )
        elif cmd == "delete":
            receipt = repo.delete_table(args.name)
            out.emit(
                {
                    "op_id": receipt.op_id,
                    "table": receipt.table,
                    "instances": list(receipt.instances),
                    "archive_path": receipt.archive_path,
                },
                f"{receipt.op_id} archived table {args.name} "
                f"({len(receipt.instances)} instances)",
            )
        else:
            tables = repo.list_tables()
            out.emit({"tables": tables}, "\n".join(tables))
        return EXIT_OK

    if group == "instance":
        if cmd == "create":
            iid = repo.create_instance(args.table, external=args.external)
            out.emit(
                {"op_id": repo.last_op_id, "table": args.table, "instance_id": iid},
                f"{repo.last_op_id} created instance {args.table}@{iid}",
            )
        elif cmd == "delete":
            receipt = repo.delete_instance(args.table, args.instance_id)
            out.emit(
                {
                    "op_id": receipt.op_id,
                    "table": receipt.table,
                    "instances": list(receipt.instances),
                    "archive_path": receipt.archive_path,
                },
                f"{receipt.op_id} archived {args.table}@{args.instance_id}",
            )
        elif cmd == "list":
            instances = repo.list_instances(args.table)
            out.emit(
                {"table": args.table, "instances": instances},
                "\n".join(f"{i['instance_id']} [{i['status']}]" for i in instances),
            )
        else:  # show
            doc = repo.query_metadata(
                args.table, "description", instance_id=args.instance_id
            )
            out.emit({"table": args.table, "description": doc}, str(doc))
        return EXIT_OK

    if group == "builder":
        if cmd == "create":
            path = repo.create_builder_file(args.table, args.name)
            out.emit(
                {"op_id": repo.last_op_id, "path": str(path)},
                f"{repo.last_op_id} created builder at {path}",
            )
        elif cmd == "edit-path":
            out.emit({"path": str(repo.builder_path(args.table, args.name))},
                     str(repo.builder_path(args.table, args.name)))
        else:  # validate
            summary = repo.validate_builder(args.table, args.name)
            out.emit({"builder": summary}, f"builder {args.name} is valid")
        return EXIT_OK

    if group == "module":
        if cmd == "create":
            path = repo.create_code_module(args.name)
            out.emit(
                {"op_id": repo.last_op_id, "path": str(path)},
                f"{repo.last_op_id} created module at {path}",
            )
        else:
            modules = repo.list_code_modules()
            out.emit({"modules": modules}, "\n".join(modules))
        return EXIT_OK

    if group == "execute":
        try:
            iid = repo.execute_instance(args.table)
        except OperationPaused as exc:
            out.emit(
                {"op_id": exc.op_id, "state": "paused", "reason": exc.reason},
                f"{exc.op_id} paused: {exc.reason}",
            )
            return EXIT_OK
        out.emit(
            {"op_id": repo.last_op_id, "table": args.table, "instance_id": iid},
            f"{repo.last_op_id} committed {args.table}@{iid}",
        )
        return EXIT_OK

    if group == "write":
        frame = _load_csv_frame(args.csv, args.schema)
        iid = repo.write_instance(
            frame, args.table, description=args.description, artifacts=args.artifacts
        )
        out.emit(
            {"op_id": repo.last_op_id, "table": args.table, "instance_id": iid},
            f"{repo.last_op_id} committed {args.table}@{iid}",
        )
        return EXIT_OK

    if group == "df":
        frame = repo.get_dataframe(args.table, instance_id=args.instance)
        doc = frame.to_json_doc()
        doc["table"] = args.table
        header = "\t".join(frame.column_names)
        body = "\n".join("\t".join(str(c) for c in row) for row in frame.rows)
        out.emit(doc, header + ("\n" + body if body else ""))
        return EXIT_OK

    if group == "meta":
        doc = repo.query_metadata(
            args.table,
            args.facet,
            instance_id=args.instance,
            archived=args.archived,
            name=args.name,
        )
        out.emit(
            {
                "selector": {
                    "table": args.table,
                    "facet": args.facet,
                    "instance": args.instance,
                    "name": args.name,
                    "archived": args.archived,
                },
                "document": doc,
            },
            json.dumps(doc, indent=2, sort_keys=True, default=str),
        )
        return EXIT_OK

    if group == "lineage":
        graph = repo.trace_lineage(
            args.table, args.instance_id, direction=args.direction, depth=args.depth
        )
        human = "\n".join(
            f"{e['from']['table']}@{e['from']['instance']} -> "
            f"{e['to']['table']}@{e['to']['instance']} [{e['sink_slot']}]"
            for e in graph["edges"]
        )
        out.emit(graph, human or f"{args.table}@{args.instance_id}")
        return EXIT_OK

    if group == "op":
        if cmd == "list":
            ops = repo.operations()
            out.emit(
                {"operations": ops},
                "\n".join(f"{o['op_id']} {o['state']} {o['op_type']}" for o in ops),
            )
        elif cmd == "status":
            record = repo.operation_status(args.op_id)
            out.emit({"record": record}, f"{args.op_id}: {record.get('state')}")
        elif cmd == "pause":
            record = repo.pause_operation(args.op_id)
            out.emit({"op_id": args.op_id, "state": record["state"]}, f"{args.op_id} paused")
        elif cmd == "resume":
            try:
                result = repo.resume_operation(args.op_id)
            except OperationPaused as exc:
                out.emit({"op_id": exc.op_id, "state": "paused"}, f"{exc.op_id} paused again")
                return EXIT_OK
            out.emit(
                {"op_id": args.op_id, "state": "committed", "result": str(result)},
                f"{args.op_id} resumed and committed",
            )
        else:  # stop
            result = repo.stop_operation(args.op_id, revert=not args.no_revert)
            out.emit(result, f"{args.op_id}: {result['state']}")
        return EXIT_OK

    if group == "recover":
        report = repo.recover()
        doc = report.to_doc()
        human = "\n".join(
            f"{e['op_id']}: {e['disposition']}" for e in doc["operations"]
        )
        out.emit(doc, human or "no orphaned operations")
        return EXIT_OK

    raise ValidationError(f"unknown command {group!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = _Output(args.json)
    try:
        return _dispatch(args, out)
    except OperationPaused as exc:
        out.emit({"op_id": exc.op_id, "state": "paused"}, f"{exc.op_id} paused")
        return EXIT_OK
    except TableVaultError as exc:
        kind, code = _error_kind(exc)
        out.error(kind, str(exc))
        return code
    except Exception as exc:  # pragma: no cover - internal failure surface
        out.error("internal", f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
