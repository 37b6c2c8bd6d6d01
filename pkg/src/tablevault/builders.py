"""Declarative builders: loading, validation and managed execution.

Two builder kinds drive instance creation. The IndexBuilder runs once and
produces the row index with its columns; each ColumnBuilder then fills
its ``changed_columns``. Arguments may be literals or reference strings;
a ColumnBuilder whose reference arguments all read whole frames
(reduction pattern) is invoked once for the entire column, anything
row-shaped is invoked once per row with the current row index bound.

Row evaluation runs up to ``nthreads`` executor calls concurrently;
results land in a per-row spill ledger as they complete (durable, so a
paused or crashed execution resumes without recomputing finished rows)
and compile into the dataframe in row order regardless of completion
order.

Builder documents and the executed code modules are snapshotted into the
instance directory at execution time, so later edits to the live copies
never change what a committed instance records.
"""

from __future__ import annotations

import json
import os
import shutil
import subprocess
import sys
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import yaml

from . import _clock, _fsio, layout, lineage, opexec
from .opexec.kill import maybe_kill
from .errors import (
    BuilderValidationError,
    NotFound,
    OperationPaused,
    ParseError,
    Reverted,
    StateError,
    TableVaultError,
    ValidationError,
)
from .opexec import EXCLUSIVE, SHARED, instance_target, module_target, table_target
from .refparse import (
    AccessPattern,
    Keyword,
    RefExpr,
    ResolutionContext,
    classify,
    extract_dependencies,
    is_refstring,
    parse,
    resolve,
)
from .tabular import DTYPES, TabularData

INDEX_BUILDER = "IndexBuilder"
COLUMN_BUILDER = "ColumnBuilder"


@dataclass
class BuilderSpec:
    name: str
    builder_type: str
    changed_columns: list[str]
    python_function: str
    code_module: str
    primary_key: list[str] | None = None
    is_custom: bool = False
    arguments: dict[str, Any] = field(default_factory=dict)
    dtypes: dict[str, str] = field(default_factory=dict)
    nthreads: Any = 1
    on_error: str = "revert"
    retries: int = 0
    parsed_args: dict[str, RefExpr | Keyword] = field(default_factory=dict, repr=False)

    def dtype_for(self, column: str) -> str:
        return self.dtypes.get(column, "string")

    def summary(self) -> dict:
        return {
            "name": self.name,
            "builder_type": self.builder_type,
            "changed_columns": list(self.changed_columns),
            "primary_key": list(self.primary_key) if self.primary_key else None,
            "python_function": self.python_function,
            "code_module": self.code_module,
            "arguments": sorted(self.arguments),
            "reference_arguments": sorted(self.parsed_args),
        }


def _fail(field_name: str, message: str) -> BuilderValidationError:
    return BuilderValidationError(f"{field_name}: {message}", field=field_name)


def load_builder(text: str, name: str) -> BuilderSpec:
    """Parse and validate one builder document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise BuilderValidationError(f"invalid YAML: {exc}")
    if not isinstance(doc, dict):
        raise BuilderValidationError("builder document must be a YAML mapping")
    if doc.get("format_version") not in (None, 1):
        raise _fail("format_version", f"unsupported version {doc['format_version']!r}")
    btype = doc.get("builder_type")
    if btype not in (INDEX_BUILDER, COLUMN_BUILDER):
        raise _fail("builder_type", f"expected IndexBuilder or ColumnBuilder, got {btype!r}")
    changed = doc.get("changed_columns")
    if not isinstance(changed, list) or not changed or not all(
        isinstance(c, str) for c in changed
    ):
        raise _fail("changed_columns", "must be a nonempty list of column names")
    pk = doc.get("primary_key")
    if pk is not None:
        if btype != INDEX_BUILDER:
            raise _fail("primary_key", "only an IndexBuilder may declare a primary key")
        if not isinstance(pk, list) or not all(isinstance(c, str) for c in pk):
            raise _fail("primary_key", "must be a list of column names")
    fn = doc.get("python_function")
    if not isinstance(fn, str) or not fn:
        raise _fail("python_function", "required")
    module = doc.get("code_module")
    if not isinstance(module, str) or not module:
        raise _fail("code_module", "required")
    arguments = doc.get("arguments") or {}
    if not isinstance(arguments, dict):
        raise _fail("arguments", "must be a mapping")
    dtypes = doc.get("dtypes") or {}
    if not isinstance(dtypes, dict):
        raise _fail("dtypes", "must be a mapping")
    allowed = set(changed) | set(pk or [])
    for column, dtype in dtypes.items():
        if column not in allowed:
            raise _fail("dtypes", f"column {column!r} is not produced by this builder")
        if dtype not in DTYPES:
            raise _fail("dtypes", f"unknown dtype {dtype!r} for column {column!r}")
    nthreads = doc.get("nthreads", 1)
    if btype == INDEX_BUILDER and "nthreads" in doc:
        raise _fail("nthreads", "an IndexBuilder runs once; nthreads does not apply")
    if isinstance(nthreads, bool) or not (
        isinstance(nthreads, int) or is_refstring(nthreads)
    ):
        raise _fail("nthreads", "must be a positive integer or a reference string")
    if isinstance(nthreads, int) and nthreads < 1:
        raise _fail("nthreads", "must be >= 1")
    on_error = doc.get("on_error", "revert")
    if on_error not in ("revert", "pause"):
        raise _fail("on_error", "must be 'revert' or 'pause'")
    retries = doc.get("retries", 0)
    if isinstance(retries, bool) or not isinstance(retries, int) or retries < 0:
        raise _fail("retries", "must be a non-negative integer")
    parsed: dict[str, RefExpr | Keyword] = {}
    for arg_name, value in arguments.items():
        if is_refstring(value):
            try:
                parsed[arg_name] = parse(value.strip())
            except ParseError as exc:
                raise _fail(f"arguments.{arg_name}", str(exc))
    if is_refstring(nthreads):
        try:
            parse(str(nthreads).strip())
        except ParseError as exc:
            raise _fail("nthreads", str(exc))
    return BuilderSpec(
        name=name,
        builder_type=btype,
        changed_columns=list(changed),
        primary_key=list(pk) if pk else None,
        python_function=fn,
        code_module=module,
        is_custom=bool(doc.get("is_custom", False)),
        arguments=dict(arguments),
        dtypes=dict(dtypes),
        nthreads=nthreads,
        on_error=on_error,
        retries=retries,
        parsed_args=parsed,
    )


# -- executor registry ---------------------------------------------------------


class ExecutorRegistry:
    """Maps (code_module, python_function) to builtin callables.

    Names without a builtin binding fall back to the subprocess protocol
    against an executable under ``code_modules/<module>/``. Executors
    marked serial force nthreads=1.
    """

    def __init__(self):
        self._builtins: dict[tuple[str, str], tuple[Callable, bool]] = {}

    def register(self, module: str, name: str, fn: Callable, serial: bool = False) -> None:
        self._builtins[(module, name)] = (fn, serial)

    def builtin(self, module: str, name: str) -> tuple[Callable, bool] | None:
        return self._builtins.get((module, name))


def register_builtin(
    registry: ExecutorRegistry, module: str, name: str, fn: Callable, serial: bool = False
) -> None:
    registry.register(module, name, fn, serial=serial)


def create_paper_table_from_folder(folder_dir: str, artifact_folder: str) -> list[dict]:
    """Import every file from a local folder into the instance artifacts."""
    src = Path(folder_dir)
    if not src.is_dir():
        raise ValidationError(f"folder {folder_dir!r} does not exist")
    dst = Path(artifact_folder)
    dst.mkdir(parents=True, exist_ok=True)
    rows = []
    for item in sorted(src.iterdir()):
        if not item.is_file():
            continue
        shutil.copyfile(item, dst / item.name)
        rows.append({"file_name": item.name, "artifact_name": item.name})
    return rows


def create_data_table_from_table(folder_dir) -> list[list]:
    """Seed a row index from a referenced column (or single-column frame)."""
    if isinstance(folder_dir, TabularData):
        values = folder_dir.column_values(folder_dir.column_names[0])
    elif isinstance(folder_dir, list):
        values = folder_dir
    else:
        values = [folder_dir]
    return [[v] for v in values]


def mock_ask_openai(document: str, question: str, model: str) -> str:
    """Offline classifier stand-in, deterministic in the document content."""
    try:
        text = Path(document).read_text("utf-8", errors="ignore").lower()
    except OSError as exc:
        raise ValidationError(f"cannot read document {document!r}: {exc}")
    if "once upon a time" in text:
        return "fiction"
    return "this is nonfiction"


def default_registry() -> ExecutorRegistry:
    registry = ExecutorRegistry()
    registry.register("table_generation", "create_paper_table_from_folder", create_paper_table_from_folder)
    registry.register("table_generation", "create_data_table_from_table", create_data_table_from_table)
    registry.register("openai_helper", "ask_openai", mock_ask_openai)
    return registry


def _jsonable(value: Any) -> Any:
    if isinstance(value, TabularData):
        return value.to_json_doc()
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    return value


def invoke_subprocess(root: Path, module: str, name: str, payload: dict) -> Any:
    """Run an on-disk executor: one JSON document in, one out.

    stdin:  {"args": {...}, "artifact_folder": ..., "op_id": ...}
    stdout: {"value": ...} on success or {"error": ...}; a nonzero exit is
    a row failure.
    """
    base = layout.module_dir(root, module)
    script = base / name
    if script.is_file() and os.access(script, os.X_OK):
        cmd = [str(script)]
    elif (base / f"{name}.py").is_file():
        cmd = [sys.executable, str(base / f"{name}.py")]
    else:
        raise BuilderValidationError(
            f"no executor for {module}.{name}: not a builtin and no file under "
            f"code_modules/{module}/"
        )
    proc = subprocess.run(
        cmd,
        input=json.dumps(payload).encode("utf-8"),
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
    )
    if proc.returncode != 0:
        raise _RowFailure(
            f"executor {module}.{name} exited {proc.returncode}: "
            f"{proc.stderr.decode('utf-8', 'replace').strip()}"
        )
    try:
        doc = json.loads(proc.stdout.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise _RowFailure(f"executor {module}.{name} wrote invalid JSON")
    if "error" in doc:
        raise _RowFailure(f"executor {module}.{name} failed: {doc['error']}")
    return doc.get("value")


class _RowFailure(TableVaultError):
    pass


# -- execution engine -----------------------------------------------------------


@dataclass
class _Invoker:
    repo: Any
    registry: ExecutorRegistry
    op_id: str
    artifact_folder: str
    calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def call(self, spec: BuilderSpec, args: dict[str, Any]) -> Any:
        with self._lock:
            self.calls += 1
        builtin = self.registry.builtin(spec.code_module, spec.python_function)
        if builtin is not None:
            fn, _ = builtin
            try:
                return fn(**args)
            except _RowFailure:
                raise
            except Exception as exc:
                raise _RowFailure(
                    f"executor {spec.code_module}.{spec.python_function} raised "
                    f"{type(exc).__name__}: {exc}"
                )
        payload = {
            "args": {k: _jsonable(v) for k, v in args.items()},
            "artifact_folder": self.artifact_folder,
            "op_id": self.op_id,
        }
        return invoke_subprocess(self.repo.root, spec.code_module, spec.python_function, payload)

    def serial_only(self, spec: BuilderSpec) -> bool:
        builtin = self.registry.builtin(spec.code_module, spec.python_function)
        return bool(builtin and builtin[1])


def _referenced_tables(specs: list[BuilderSpec]) -> set[str]:
    tables: set[str] = set()

    def walk(node):
        if isinstance(node, Keyword):
            return
        if not node.is_self:
            tables.add(node.table)
        for f in node.filters:
            value = f.value
            if hasattr(value, "expr"):
                walk(value.expr)

    for spec in specs:
        for expr in spec.parsed_args.values():
            walk(expr)
        if is_refstring(spec.nthreads):
            walk(parse(str(spec.nthreads).strip()))
    return tables


def _resolve_arguments(
    spec: BuilderSpec, ctx: ResolutionContext
) -> dict[str, Any]:
    args = {}
    for name, value in spec.arguments.items():
        if name in spec.parsed_args:
            args[name] = resolve(spec.parsed_args[name], ctx)
        else:
            args[name] = value
    return args


def _rows_from_index_result(spec: BuilderSpec, result: Any) -> list[list[Any]]:
    columns = spec.changed_columns
    if isinstance(result, TabularData):
        missing = [c for c in columns if not result.has_column(c)]
        if missing:
            raise ValidationError(f"index builder result lacks columns {missing}")
        return [
            [result.cell(i, c) for c in columns] for i in range(result.n_rows)
        ]
    if not isinstance(result, list):
        raise ValidationError("index builder must return a list of rows")
    rows = []
    for item in result:
        if isinstance(item, dict):
            try:
                rows.append([item[c] for c in columns])
            except KeyError as exc:
                raise ValidationError(f"index row missing column {exc}")
        elif isinstance(item, (list, tuple)):
            if len(item) != len(columns):
                raise ValidationError(
                    f"index row width {len(item)} != {len(columns)} changed columns"
                )
            rows.append(list(item))
        elif len(columns) == 1:
            rows.append([item])
        else:
            raise ValidationError("index rows must be dicts or sequences")
    return rows


def _split_row_value(spec: BuilderSpec, value: Any) -> list[Any]:
    columns = spec.changed_columns
    if len(columns) == 1:
        return [value]
    if isinstance(value, dict):
        try:
            return [value[c] for c in columns]
        except KeyError as exc:
            raise ValidationError(f"row result missing column {exc}")
    if isinstance(value, (list, tuple)) and len(value) == len(columns):
        return list(value)
    raise ValidationError(
        f"row result must map onto changed columns {columns}, got {value!r}"
    )


# -- row ledger -------------------------------------------------------------------


class RowLedger:
    """Durable per-row completion markers under the operation directory."""

    def __init__(self, op: opexec.Operation, builder: str, fsync: bool):
        self.dir = op.rows_dir / builder
        self.fsync = fsync
        _fsio.ensure_dir(self.dir)

    def done(self) -> dict[int, Any]:
        out = {}
        for path in sorted(self.dir.glob("*.val")):
            try:
                out[int(path.stem)] = json.loads(path.read_text("utf-8"))["value"]
            except (ValueError, KeyError, json.JSONDecodeError):
                continue
        return out

    def record(self, row: int, value: Any) -> None:
        _fsio.atomic_write_bytes(
            self.dir / f"{row}.val",
            json.dumps({"value": _jsonable(value)}, sort_keys=True).encode("utf-8"),
            fsync=self.fsync,
        )
        maybe_kill("rows:ledger")

    def record_failure(self, row: int, error: str) -> None:
        _fsio.atomic_write_bytes(
            self.dir / f"{row}.failed",
            json.dumps({"error": error}).encode("utf-8"),
            fsync=self.fsync,
        )

    def mark_builder_done(self) -> None:
        _fsio.atomic_write_bytes(self.dir / "builder.done", b"done\n", fsync=self.fsync)

    def builder_done(self) -> bool:
        return (self.dir / "builder.done").exists()


def evaluate_rows(
    op: opexec.Operation,
    spec: BuilderSpec,
    frame: TabularData,
    nthreads: int,
    invoker: _Invoker,
    make_ctx: Callable[[int], ResolutionContext],
    ledger: RowLedger,
) -> list[Any]:
    """Per-row evaluation with bounded concurrency and durable progress.

    Rows already in the ledger are never re-executed; pause and stop
    requests are honored between submissions, after in-flight rows drain.
    """
    n = frame.n_rows
    results = ledger.done()
    pending = [i for i in range(n) if i not in results]

    def run_row(i: int) -> tuple[int, Any]:
        ctx = make_ctx(i)
        last_error: Exception | None = None
        for _ in range(spec.retries + 1):
            try:
                args = _resolve_arguments(spec, ctx)
                return i, invoker.call(spec, args)
            except _RowFailure as exc:
                last_error = exc
                continue
        assert last_error is not None
        raise _RowError(i, str(last_error))

    failures: list[_RowError] = []
    interrupted: Exception | None = None
    with ThreadPoolExecutor(max_workers=max(1, nthreads)) as pool:
        in_flight: set = set()
        queue = list(pending)
        while queue or in_flight:
            while queue and len(in_flight) < nthreads and interrupted is None:
                try:
                    op.poll_interrupt()
                except (opexec.PauseRequested, opexec.StopRequested) as exc:
                    interrupted = exc
                    queue.clear()
                    break
                in_flight.add(pool.submit(run_row, queue.pop(0)))
            if not in_flight:
                break
            done, in_flight = wait(in_flight, return_when=FIRST_COMPLETED)
            for future in done:
                try:
                    i, value = future.result()
                except _RowError as exc:
                    ledger.record_failure(exc.row, exc.message)
                    failures.append(exc)
                else:
                    ledger.record(i, value)
                    results[i] = value
            if failures and spec.on_error == "revert":
                queue.clear()
    if failures:
        detail = "; ".join(f"row {f.row}: {f.message}" for f in failures[:3])
        if spec.on_error == "pause":
            op.pause_self(f"row failures in {spec.name}: {detail}")
            raise opexec.PauseRequested()
        raise ValidationError(f"builder {spec.name!r} row failures: {detail}")
    if interrupted is not None:
        raise interrupted
    return [results[i] for i in range(n)]


class _RowError(Exception):
    def __init__(self, row: int, message: str):
        super().__init__(message)
        self.row = row
        self.message = message


# -- instance execution ------------------------------------------------------------


def _load_instance_specs(repo, table: str, instance: str) -> list[BuilderSpec]:
    bdir = layout.instance_dir(repo.root, table, instance) / "builders"
    specs = []
    for path in sorted(bdir.glob("*.yaml")):
        specs.append(load_builder(path.read_text("utf-8"), path.stem))
    return specs


def _snapshot_sources(repo, op, table: str, instance: str, specs: list[BuilderSpec]) -> None:
    inst_rel = f"{layout.TABLES}/{table}/{instance}"
    pending = layout.pending_builders_dir(repo.root, table)
    for path in sorted(pending.glob("*.yaml")):
        op.stage_write(f"{inst_rel}/builders/{path.name}", path.read_bytes())
    for module in sorted({s.code_module for s in specs}):
        mdir = layout.module_dir(repo.root, module)
        if not mdir.is_dir():
            continue
        for path in _fsio.walk_files(mdir):
            rel = path.relative_to(mdir).as_posix()
            op.stage_write(f"{inst_rel}/code/{module}/{rel}", path.read_bytes())


def _resolve_nthreads(spec: BuilderSpec, ctx: ResolutionContext, invoker: _Invoker) -> int:
    raw = spec.nthreads
    if is_refstring(raw):
        value = resolve(parse(str(raw).strip()), ctx)
        if isinstance(value, list) and len(value) == 1:
            value = value[0]
        try:
            value = int(value)
        except (TypeError, ValueError):
            raise ValidationError(f"nthreads reference resolved to {value!r}")
    else:
        value = int(raw)
    if value < 1:
        raise ValidationError(f"nthreads must be >= 1, resolved {value}")
    if invoker.serial_only(spec):
        return 1
    return value


def _per_row(spec: BuilderSpec) -> bool:
    """Row-shaped arguments force one executor call per row; builders whose
    references all read whole frames run once for the entire column."""
    for expr in spec.parsed_args.values():
        if isinstance(expr, Keyword):
            continue
        if classify(expr) is not AccessPattern.REDUCTION:
            return True
    return False


def _run_execution(repo, op: opexec.Operation, registry: ExecutorRegistry, rows_allowed: bool) -> str:
    table = op.payload["table"]
    instance = op.payload["instance"]
    inst_rel = f"{layout.TABLES}/{table}/{instance}"
    inst_dir = layout.instance_dir(repo.root, table, instance)
    artifact_dir = layout.artifacts_dir(repo.root, table, instance)

    snapshot_exists = (inst_dir / "builders").is_dir()
    if not snapshot_exists:
        pending = layout.pending_builders_dir(repo.root, table)
        pending_specs = []
        for path in sorted(pending.glob("*.yaml")):
            pending_specs.append(load_builder(path.read_text("utf-8"), path.stem))
        if sum(1 for s in pending_specs if s.builder_type == INDEX_BUILDER) != 1:
            raise BuilderValidationError(
                "exactly one IndexBuilder must be staged before execution"
            )
        _snapshot_sources(repo, op, table, instance, pending_specs)
    specs = _load_instance_specs(repo, table, instance)
    index_spec = next(s for s in specs if s.builder_type == INDEX_BUILDER)
    column_specs = sorted(
        (s for s in specs if s.builder_type == COLUMN_BUILDER), key=lambda s: s.name
    )
    op.ensure_dir(f"{inst_rel}/artifacts")

    invoker = _Invoker(
        repo=repo,
        registry=registry,
        op_id=op.op_id,
        artifact_folder=str(artifact_dir),
    )
    view = repo.view()

    def base_ctx(frame: TabularData | None, row: int | None = None) -> ResolutionContext:
        return ResolutionContext(
            view=view,
            row_index=row,
            op_id=op.op_id,
            artifact_folder=str(artifact_dir),
            self_frame=frame,
            self_table=table,
            self_instance=instance,
            self_meta=_self_meta(repo, table, instance),
        )

    # index phase (skipped when a resumed run already staged the dataframe)
    if (inst_dir / "data.csv").exists():
        frame = repo._read_frame_files(table, instance)
    else:
        if not rows_allowed:
            raise ValidationError("execution stopped before the row index was built")
        args = _resolve_arguments(index_spec, base_ctx(None))
        result = invoker.call(index_spec, args)
        rows = _rows_from_index_result(index_spec, result)
        columns = [(c, index_spec.dtype_for(c)) for c in index_spec.changed_columns]
        frame = TabularData(columns=columns, rows=rows, primary_key=index_spec.primary_key)
        op.stage_write(f"{inst_rel}/data.csv", frame.to_csv_bytes())
        op.stage_write(f"{inst_rel}/schema.yaml", _fsio.yaml_bytes(frame.schema_doc()))

    # column phases, lexicographic by builder name; a stop decision without
    # revert falls through to the validation gate (commit-if-valid)
    try:
        op.poll_interrupt()
        for spec in column_specs:
            ledger = RowLedger(op, spec.name, repo.cfg.fsync)
            if ledger.builder_done() and all(
                c in frame.column_names for c in spec.changed_columns
            ):
                continue
            nthreads = _resolve_nthreads(spec, base_ctx(frame), invoker)
            n = frame.n_rows
            if n == 0:
                values = []
            elif not _per_row(spec):
                if ledger.builder_done():
                    values = [ledger.done()[i] for i in range(n)]
                else:
                    if not rows_allowed:
                        raise ValidationError(f"builder {spec.name!r} has not run")
                    args = _resolve_arguments(spec, base_ctx(frame))
                    result = invoker.call(spec, args)
                    if not isinstance(result, list):
                        result = [result] * n
                    if len(result) != n:
                        raise ValidationError(
                            f"builder {spec.name!r} returned {len(result)} values for {n} rows"
                        )
                    values = result
                    for i, v in enumerate(values):
                        ledger.record(i, v)
            else:
                if not rows_allowed:
                    done = ledger.done()
                    if len(done) < n:
                        raise ValidationError(
                            f"builder {spec.name!r} completed {len(done)} of {n} rows"
                        )
                    values = [done[i] for i in range(n)]
                else:
                    values = evaluate_rows(
                        op,
                        spec,
                        frame,
                        nthreads,
                        invoker,
                        make_ctx=lambda i: base_ctx(frame, i),
                        ledger=ledger,
                    )
            per_column = (
                list(zip(*(_split_row_value(spec, v) for v in values)))
                if values
                else [[] for _ in spec.changed_columns]
            )
            for column, column_values in zip(spec.changed_columns, per_column):
                frame = frame.with_column(column, spec.dtype_for(column), list(column_values))
            op.stage_write(f"{inst_rel}/data.csv", frame.to_csv_bytes())
            op.stage_write(f"{inst_rel}/schema.yaml", _fsio.yaml_bytes(frame.schema_doc()))
            ledger.mark_builder_done()
    except opexec.StopRequested as stop:
        if stop.revert:
            raise

    # lineage over every argument, nthreads included
    dep_ctx = base_ctx(frame)
    edges = []
    for spec in specs:
        for arg_name, expr in sorted(spec.parsed_args.items()):
            if spec.builder_type == COLUMN_BUILDER:
                slot = f"column:{','.join(spec.changed_columns)}/arg:{arg_name}"
            else:
                slot = f"builder:{spec.name}/arg:{arg_name}"
            for dep in sorted(
                extract_dependencies(expr, dep_ctx),
                key=lambda d: (d.table, d.resolved_instance),
            ):
                edges.append((dep, slot))
        if is_refstring(spec.nthreads):
            for dep in sorted(
                extract_dependencies(parse(str(spec.nthreads).strip()), dep_ctx),
                key=lambda d: (d.table, d.resolved_instance),
            ):
                edges.append((dep, "exec:nthreads"))
    chain = [op.op_id] + opexec.author_chain(repo.root, op.author)
    lineage.record_lineage(
        op,
        table,
        instance,
        edges=edges,
        author_chain=chain,
        ingestion=None,
        is_committed=repo.is_committed,
    )

    digest = frame.data_digest(artifact_dir)
    temp_doc = repo._instance_doc(table, instance) or {}
    committed = dict(temp_doc)
    committed.update(
        format_version=_fsio.FORMAT_VERSION,
        table=table,
        instance_id=instance,
        status="committed",
        external=False,
        committed_at=_clock.iso(),
        data_digest=digest,
        op_id=op.op_id,
    )
    op.stage_finalize(f"{inst_rel}/description.yaml", _fsio.yaml_bytes(committed))

    def final_frame_check():
        stored = repo._read_frame_files(table, instance)
        declared = set()
        for spec in specs:
            declared.update(spec.changed_columns)
        missing = [c for c in declared if not stored.has_column(c)]
        if missing:
            raise ValidationError(f"committed frame lacks declared columns {missing}")
        stored.validate(artifact_dir)

    op.validate_and_commit([("frame_and_artifacts", final_frame_check)])
    return instance


def _self_meta(repo, table: str, instance: str) -> dict:
    inst = layout.instance_dir(repo.root, table, instance)
    meta: dict[str, Any] = {}
    desc = repo._instance_doc(table, instance)
    if desc is not None:
        meta["description"] = desc.get("description", "")
    bdir = inst / "builders"
    if bdir.is_dir():
        meta["builders"] = {p.stem: p.read_text("utf-8") for p in sorted(bdir.glob("*.yaml"))}
    return meta


def execute_instance(repo, table: str, caller: str | None = None, registry=None) -> str:
    """Run the staged builders of a table's temporary instance to commit."""
    registry = registry or default_registry()
    caller = caller or repo.author
    if not repo.table_exists(table):
        raise NotFound(f"table {table!r} does not exist")
    instance = repo._find_temp_instance(table, external=False)
    if instance is None:
        raise StateError(f"table {table!r} has no temporary instance awaiting execution")
    pending = layout.pending_builders_dir(repo.root, table)
    pending_specs = [
        load_builder(p.read_text("utf-8"), p.stem) for p in sorted(pending.glob("*.yaml"))
    ]
    if sum(1 for s in pending_specs if s.builder_type == INDEX_BUILDER) != 1:
        raise BuilderValidationError("exactly one IndexBuilder must be staged before execution")
    targets = [
        (table_target(table), SHARED),
        (instance_target(table, instance), EXCLUSIVE),
    ]
    for dep_table in sorted(_referenced_tables(pending_specs)):
        if dep_table != table:
            targets.append((table_target(dep_table), SHARED))
    for module in sorted({s.code_module for s in pending_specs}):
        targets.append((module_target(module), SHARED))

    op = opexec.begin(
        repo.root,
        repo.cfg,
        caller,
        "execute_instance",
        targets,
        payload={"table": table, "instance": instance},
    )
    repo._last_op_id = op.op_id
    return _drive_execution(repo, op, registry)


def _drive_execution(repo, op: opexec.Operation, registry: ExecutorRegistry) -> str:
    try:
        return _run_execution(repo, op, registry, rows_allowed=True)
    except opexec.PauseRequested:
        raise OperationPaused(op.op_id, op.record.get("pause_reason", ""))
    except opexec.StopRequested:
        op.revert("stopped by author")
        raise Reverted("stopped by author", op.op_id)
    except (Reverted, OperationPaused):
        raise
    except TableVaultError as exc:
        op.revert(f"{type(exc).__name__}: {exc}")
        raise Reverted(f"{type(exc).__name__}: {exc}", op.op_id)
    except Exception as exc:
        op.revert(f"{type(exc).__name__}: {exc}")
        raise


def resume_execute(repo, op_id: str, registry=None) -> str:
    """Continue a paused execution; completed rows are never recomputed."""
    registry = registry or default_registry()
    op = opexec.adopt(repo.root, repo.cfg, op_id)
    repo._last_op_id = op_id
    return _drive_execution(repo, op, registry)


def finish_from_ledger(repo, op: opexec.Operation, registry=None) -> str:
    """Stop-without-revert: commit only if the ledger already covers all rows."""
    registry = registry or default_registry()
    try:
        return _run_execution(repo, op, registry, rows_allowed=False)
    except opexec.PauseRequested:
        raise OperationPaused(op.op_id)
    except Reverted:
        raise
    except TableVaultError as exc:
        op.revert(f"{type(exc).__name__}: {exc}")
        raise Reverted(f"{type(exc).__name__}: {exc}", op.op_id)
