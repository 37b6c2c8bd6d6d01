"""Resolution of parsed reference expressions against repository state.

Resolution is a pure function of (expression, committed repository state,
context): nested references resolve innermost-first and their scalar
results splice into the enclosing filter before it applies. Filters
narrow an ordered row selection; a projected column over a selection
narrowed to exactly one row by a point index or a column-value match
yields a scalar, slices always yield collections, and a bare table yields
the whole frame.

``artifact_string`` cells resolve to absolute filesystem paths so that
executors can consume referenced artifacts directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Protocol, Union

from ..errors import ContextError, RangeError, RefTypeError, ResolveError
from ..tabular import TabularData
from .ast import (
    AccessPattern,
    Filter,
    Keyword,
    KeywordTerm,
    NestedRef,
    RefExpr,
    ScalarTerm,
    SelfColumnTerm,
    SelfIndexTerm,
    SliceTerm,
)

Scalar = Union[int, float, bool, str]


class RepositoryView(Protocol):
    """Committed-state reads needed by the resolver."""

    def latest_committed(self, table: str) -> str | None: ...

    def is_committed(self, table: str, instance: str) -> bool: ...

    def frame(self, table: str, instance: str) -> TabularData: ...

    def artifact_root(self, table: str, instance: str) -> Path: ...

    def metadata(self, table: str, instance: str | None, facet: tuple[str, ...]) -> Any: ...


@dataclass
class Access:
    """One frame access observed during resolution (instrumentation)."""

    table: str
    instance: str
    columns: frozenset[str]
    pattern: AccessPattern
    fallback: bool = False


@dataclass
class ResolutionContext:
    view: RepositoryView
    row_index: int | None = None
    op_id: str | None = None
    artifact_folder: str | None = None
    self_frame: TabularData | None = None
    self_table: str | None = None
    self_instance: str | None = None
    self_meta: dict | None = None  # facet docs of the executing instance
    access_log: list[Access] | None = None


@dataclass(frozen=True)
class Dependency:
    table: str
    resolved_instance: str
    columns: frozenset[str] = frozenset()
    pattern: AccessPattern = AccessPattern.REDUCTION
    fallback: bool = False


@dataclass
class _Selection:
    """Ordered row positions plus how they were narrowed."""

    positions: list[int]
    point: bool = False  # a point-index filter was applied
    matched: bool = False  # a column-value filter was applied


def _bind_instance(expr: RefExpr, ctx: ResolutionContext) -> str:
    if expr.instance is not None:
        if not ctx.view.is_committed(expr.table, expr.instance):
            raise ResolveError(
                f"instance {expr.table}@{expr.instance} is not committed"
            )
        return expr.instance
    latest = ctx.view.latest_committed(expr.table)
    if latest is None:
        raise ResolveError(f"table {expr.table!r} has no committed instance")
    return latest


def _bind_frame(expr: RefExpr, ctx: ResolutionContext) -> tuple[TabularData, str | None]:
    if expr.is_self:
        if ctx.self_frame is None:
            raise ContextError("'self' reference outside an executing builder")
        return ctx.self_frame, ctx.self_instance
    instance = _bind_instance(expr, ctx)
    return ctx.view.frame(expr.table, instance), instance


def _require_row(ctx: ResolutionContext) -> int:
    if ctx.row_index is None:
        raise ContextError("self.index used without a current row")
    return ctx.row_index


def _self_cell(ctx: ResolutionContext, column: str) -> Any:
    if ctx.self_frame is None:
        raise ContextError(f"self.{column} used outside an executing builder")
    row = _require_row(ctx)
    if not ctx.self_frame.has_column(column):
        raise ResolveError(f"unknown column {column!r} on self")
    if not 0 <= row < ctx.self_frame.n_rows:
        raise RangeError(f"row {row} out of range for self")
    return ctx.self_frame.cell(row, column)


def _splice_scalar(value: Any, source: str) -> Scalar:
    if isinstance(value, (int, float, bool, str)):
        return value
    raise RefTypeError(f"nested reference {source} did not resolve to a scalar")


def _eval_term(term: Any, ctx: ResolutionContext) -> Any:
    if isinstance(term, ScalarTerm):
        return term.value
    if isinstance(term, SelfIndexTerm):
        return _require_row(ctx) + term.offset
    if isinstance(term, SelfColumnTerm):
        return _self_cell(ctx, term.column)
    if isinstance(term, KeywordTerm):
        if term.name == "id":
            if ctx.op_id is None:
                raise ContextError("~id~ used outside an operation")
            return ctx.op_id
        if ctx.artifact_folder is None:
            raise ContextError("~artifact_folder~ used outside an execution")
        return ctx.artifact_folder
    if isinstance(term, NestedRef):
        return _splice_scalar(resolve(term.expr, ctx), term.expr.raw or "<<...>>")
    raise ResolveError(f"unsupported term {term!r}")


def _eval_index_bound(term: Any, ctx: ResolutionContext, default: int) -> int:
    if term is None:
        return default
    value = _eval_term(term, ctx)
    if isinstance(value, bool) or not isinstance(value, int):
        raise RefTypeError(f"index bound {value!r} is not an integer")
    return value


def _coerce_literal(value: Any, dtype: str) -> Any:
    try:
        if dtype == "int":
            if isinstance(value, bool):
                raise ValueError
            return int(value)
        if dtype == "float":
            return float(value)
        if dtype == "bool":
            if isinstance(value, bool):
                return value
            if str(value) in ("true", "false"):
                return str(value) == "true"
            raise ValueError
        return str(value)
    except (TypeError, ValueError):
        raise ResolveError(f"cannot coerce {value!r} to column dtype {dtype}")


def _apply_filter(
    frame: TabularData, sel: _Selection, flt: Filter, ctx: ResolutionContext
) -> _Selection:
    key = flt.key
    if key is None or key == "index":
        if isinstance(flt.value, SliceTerm):
            n = len(sel.positions)
            lo = _eval_index_bound(flt.value.lo, ctx, 0)
            hi = _eval_index_bound(flt.value.hi, ctx, n)
            lo = min(max(lo, 0), n)
            hi = min(max(hi, 0), n)
            return _Selection(sel.positions[lo:hi], sel.point, sel.matched)
        idx = _eval_term(flt.value, ctx)
        if isinstance(idx, bool) or not isinstance(idx, int):
            raise RefTypeError(f"index filter value {idx!r} is not an integer")
        if not 0 <= idx < len(sel.positions):
            raise RangeError(
                f"index {idx} out of range for selection of {len(sel.positions)} rows"
            )
        return _Selection([sel.positions[idx]], True, sel.matched)
    # column-value filter
    if not frame.has_column(key):
        raise ResolveError(f"unknown filter column {key!r}")
    literal = _eval_term(flt.value, ctx)
    wanted = _coerce_literal(literal, frame.dtype_of(key))
    col = frame.column_names.index(key)
    positions = [i for i in sel.positions if frame.rows[i][col] == wanted]
    fallback = False
    if not positions and key == "operation" and sel.positions:
        # per-operation configuration rows: no match falls back to the
        # last row of the current selection, flagged in lineage
        positions = [sel.positions[-1]]
        fallback = True
    out = _Selection(positions, sel.point, True)
    out_fallback = getattr(sel, "_fallback", False) or fallback
    out._fallback = out_fallback  # type: ignore[attr-defined]
    return out


def _materialize(
    expr: RefExpr,
    frame: TabularData,
    sel: _Selection,
    table: str,
    instance: str | None,
    ctx: ResolutionContext,
) -> Any:
    if expr.column is not None:
        if not frame.has_column(expr.column):
            raise ResolveError(f"unknown column {expr.column!r} on {expr.table}")
        dtype = frame.dtype_of(expr.column)
        col = frame.column_names.index(expr.column)
        values = [frame.rows[i][col] for i in sel.positions]
        if dtype == "artifact_string":
            values = [_artifact_path(expr, table, instance, ctx, v) for v in values]
        if (sel.point or sel.matched) and len(values) == 1:
            return values[0]
        return values
    return frame.select_rows(sel.positions)


def _artifact_path(
    expr: RefExpr, table: str, instance: str | None, ctx: ResolutionContext, value: str
) -> str:
    if expr.is_self:
        if ctx.artifact_folder is None:
            raise ContextError("artifact cell on self without an artifact folder")
        return str(Path(ctx.artifact_folder) / value)
    assert instance is not None
    return str(ctx.view.artifact_root(table, instance) / value)


def resolve(node: Union[RefExpr, Keyword], ctx: ResolutionContext) -> Any:
    """Evaluate a parsed reference; see module docstring for shape rules."""
    if isinstance(node, Keyword):
        return _eval_term(KeywordTerm(node.name), ctx)
    if node.facet is not None:
        return resolve_metadata(node, ctx)
    frame, instance = _bind_frame(node, ctx)
    sel = _Selection(list(range(frame.n_rows)))
    for flt in node.filters:
        sel = _apply_filter(frame, sel, flt, ctx)
    if ctx.access_log is not None and not node.is_self:
        assert instance is not None
        ctx.access_log.append(
            Access(
                table=node.table,
                instance=instance,
                columns=frozenset({node.column}) if node.column else frozenset(),
                pattern=classify(node),
                fallback=getattr(sel, "_fallback", False),
            )
        )
    return _materialize(node, frame, sel, node.table, instance, ctx)


def resolve_metadata(node: RefExpr, ctx: ResolutionContext) -> Any:
    """Resolve a ``#facet`` reference through the repository metadata API."""
    if node.facet is None:
        raise ResolveError("not a metadata reference")
    if node.column is not None or node.filters:
        raise ResolveError("metadata references take no column or filters")
    facet = node.facet
    if facet[0] not in ("description", "lineage", "builders", "code", "operations", "ingestion"):
        raise ResolveError(f"unknown metadata facet {facet[0]!r}")
    if node.is_self:
        if ctx.self_meta is None:
            raise ContextError("'self' metadata outside an executing builder")
        doc: Any = ctx.self_meta
        for seg in facet:
            if not isinstance(doc, dict) or seg not in doc:
                raise ResolveError(f"facet {'.'.join(facet)} not available on self")
            doc = doc[seg]
        return doc
    instance = node.instance
    if instance is None and facet[0] not in ("description", "operations"):
        instance = _bind_instance(node, ctx)
    if ctx.access_log is not None and instance is not None:
        ctx.access_log.append(
            Access(
                table=node.table,
                instance=instance,
                columns=frozenset(),
                pattern=AccessPattern.REDUCTION,
            )
        )
    return ctx.view.metadata(node.table, instance, facet)


# -- access-pattern classification ---------------------------------------


def _uses_self_point(value: Any) -> bool:
    """True when a filter value varies one-to-one with the current row."""
    if isinstance(value, SelfIndexTerm):
        return value.offset == 0
    if isinstance(value, SelfColumnTerm):
        return True
    if isinstance(value, NestedRef):
        expr = value.expr
        for f in expr.filters:
            if isinstance(f.value, SliceTerm):
                if _uses_self_point(f.value.lo) or _uses_self_point(f.value.hi):
                    return True
            elif _uses_self_point(f.value):
                return True
        return False
    return False


def classify(expr: RefExpr) -> AccessPattern:
    """Access-pattern classification of a reference's row-selection shape.

    In order of specificity: a point ``index::self.index`` is one-to-one;
    ``index::0:self.index`` cumulation; ``index::self.index-k:self.index``
    (k>0) convolution; a column-value filter that varies with the current
    row is one-to-one, otherwise a column-value filter is a selection;
    everything else reads the whole frame (reduction).
    """
    for f in expr.filters:
        if f.key is not None and f.key != "index":
            continue
        value = f.value
        if isinstance(value, SelfIndexTerm) and value.offset == 0:
            return AccessPattern.ONE_TO_ONE
        if isinstance(value, SliceTerm):
            lo, hi = value.lo, value.hi
            hi_is_self = isinstance(hi, SelfIndexTerm) and hi.offset == 0
            if hi_is_self and isinstance(lo, ScalarTerm) and lo.kind == "int" and lo.value == 0:
                return AccessPattern.CUMULATION
            if hi_is_self and isinstance(lo, SelfIndexTerm) and lo.offset < 0:
                return AccessPattern.CONVOLUTION
    column_filters = [f for f in expr.filters if f.key is not None and f.key != "index"]
    if any(_uses_self_point(f.value) for f in column_filters):
        return AccessPattern.ONE_TO_ONE
    if column_filters:
        return AccessPattern.SELECTION
    return AccessPattern.REDUCTION


# -- dependency extraction -------------------------------------------------

_PATTERN_RANK = {
    AccessPattern.ONE_TO_ONE: 4,
    AccessPattern.CONVOLUTION: 3,
    AccessPattern.CUMULATION: 2,
    AccessPattern.SELECTION: 1,
    AccessPattern.REDUCTION: 0,
}


def _walk_refs(node: Union[RefExpr, Keyword]) -> Iterable[RefExpr]:
    if isinstance(node, Keyword):
        return
    yield node
    for f in node.filters:
        if isinstance(f.value, NestedRef):
            yield from _walk_refs(f.value.expr)


def _operation_fallback(expr: RefExpr, frame: TabularData, ctx: ResolutionContext) -> bool:
    """Whether an ``operation::`` filter on this expression will fall back."""
    for f in expr.filters:
        if f.key != "operation":
            continue
        if not frame.has_column("operation"):
            return False
        try:
            literal = _eval_term(f.value, ctx)
            wanted = _coerce_literal(literal, frame.dtype_of("operation"))
        except ResolveError:
            return False
        col = frame.column_names.index("operation")
        if not any(row[col] == wanted for row in frame.rows) and frame.n_rows:
            return True
    return False


def extract_dependencies(
    node: Union[RefExpr, Keyword], ctx: ResolutionContext
) -> set[Dependency]:
    """Every distinct committed (table, instance) a reference touches.

    Tables reached only through nested references are included; ``self``
    is excluded. When one instance is touched more than once the column
    sets union (an empty set means the whole frame) and the most specific
    access pattern wins.
    """
    merged: dict[tuple[str, str], Dependency] = {}
    for expr in _walk_refs(node):
        if expr.is_self:
            continue
        instance = _bind_instance(expr, ctx)
        columns = frozenset({expr.column}) if expr.column else frozenset()
        pattern = classify(expr)
        fallback = False
        if any(f.key == "operation" for f in expr.filters):
            frame = ctx.view.frame(expr.table, instance)
            fallback = _operation_fallback(expr, frame, ctx)
        key = (expr.table, instance)
        if key in merged:
            prev = merged[key]
            columns = frozenset() if not prev.columns or not columns else prev.columns | columns
            if _PATTERN_RANK[prev.pattern] > _PATTERN_RANK[pattern]:
                pattern = prev.pattern
            fallback = fallback or prev.fallback
        merged[key] = Dependency(
            table=expr.table,
            resolved_instance=instance,
            columns=columns,
            pattern=pattern,
            fallback=fallback,
        )
    return set(merged.values())
