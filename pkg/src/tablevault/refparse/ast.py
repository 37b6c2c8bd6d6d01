"""AST node types for the table-reference expression language.

Nodes are frozen dataclasses so parsed expressions are hashable and safe
to share between threads. ``raw`` preserves the original source text for
diagnostics and is excluded from structural equality, which makes
``parse(print(e)) == e`` the round-trip law.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Union

SELF = "self"

KEYWORD_NAMES = ("artifact_folder", "id")

FACETS = ("description", "lineage", "builders", "code", "operations", "ingestion")


class AccessPattern(enum.Enum):
    REDUCTION = "reduction"
    ONE_TO_ONE = "one_to_one"
    CUMULATION = "cumulation"
    CONVOLUTION = "convolution"
    SELECTION = "selection"


@dataclass(frozen=True)
class ScalarTerm:
    kind: str  # "int" | "string"
    value: Union[int, str]


@dataclass(frozen=True)
class SelfIndexTerm:
    offset: int = 0


@dataclass(frozen=True)
class SelfColumnTerm:
    column: str


@dataclass(frozen=True)
class KeywordTerm:
    name: str  # one of KEYWORD_NAMES


@dataclass(frozen=True)
class SliceTerm:
    lo: "Term | None"
    hi: "Term | None"


@dataclass(frozen=True)
class NestedRef:
    expr: "RefExpr"


Term = Union[ScalarTerm, SelfIndexTerm, SelfColumnTerm, KeywordTerm]
FilterValue = Union[Term, SliceTerm, NestedRef]


@dataclass(frozen=True)
class Filter:
    key: str | None  # None = bare index filter
    value: FilterValue


@dataclass(frozen=True)
class RefExpr:
    table: str  # table name or SELF
    instance: str | None = None
    column: str | None = None
    facet: tuple[str, ...] | None = None
    filters: tuple[Filter, ...] = ()
    raw: str = field(default="", compare=False)

    @property
    def is_self(self) -> bool:
        return self.table == SELF


@dataclass(frozen=True)
class Keyword:
    """A bare ``~name~`` argument outside any ``<<...>>`` reference."""

    name: str
    raw: str = field(default="", compare=False)


def _print_term(term: Term) -> str:
    if isinstance(term, ScalarTerm):
        if term.kind == "int":
            return str(term.value)
        value = str(term.value)
        if '"' not in value:
            return f'"{value}"'
        if "'" not in value:
            return f"'{value}'"
        raise ValueError(f"string term {value!r} mixes both quote characters")
    if isinstance(term, SelfIndexTerm):
        if term.offset == 0:
            return "self.index"
        return f"self.index{term.offset:+d}"
    if isinstance(term, SelfColumnTerm):
        return f"self.{term.column}"
    if isinstance(term, KeywordTerm):
        return f"~{term.name}~"
    raise TypeError(f"not a term: {term!r}")


def _print_value(value: FilterValue) -> str:
    if isinstance(value, SliceTerm):
        lo = _print_term(value.lo) if value.lo is not None else ""
        hi = _print_term(value.hi) if value.hi is not None else ""
        return f"{lo}:{hi}"
    if isinstance(value, NestedRef):
        return to_string(value.expr)
    return _print_term(value)


def to_string(node: Union[RefExpr, Keyword]) -> str:
    """Canonical text: minimal whitespace, double quotes preferred."""
    if isinstance(node, Keyword):
        return f"~{node.name}~"
    parts = [node.table]
    if node.instance is not None:
        parts.append(f"@{node.instance}")
    if node.column is not None:
        parts.append(f".{node.column}")
    if node.facet is not None:
        parts.append("#" + ".".join(node.facet))
    if node.filters:
        rendered = []
        for f in node.filters:
            if f.key is None:
                rendered.append(_print_value(f.value))
            else:
                rendered.append(f"{f.key}::{_print_value(f.value)}")
        parts.append("[" + ",".join(rendered) + "]")
    return "<<" + "".join(parts) + ">>"
