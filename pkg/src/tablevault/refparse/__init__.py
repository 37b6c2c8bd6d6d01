"""Table-reference expression language: parse, print, resolve, classify."""

from .ast import (
    SELF,
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
    to_string,
)
from .parser import is_refstring, parse
from .resolver import (
    Access,
    Dependency,
    RepositoryView,
    ResolutionContext,
    classify,
    extract_dependencies,
    resolve,
    resolve_metadata,
)

__all__ = [
    "SELF",
    "AccessPattern",
    "Access",
    "Dependency",
    "Filter",
    "Keyword",
    "KeywordTerm",
    "NestedRef",
    "RefExpr",
    "RepositoryView",
    "ResolutionContext",
    "ScalarTerm",
    "SelfColumnTerm",
    "SelfIndexTerm",
    "SliceTerm",
    "classify",
    "extract_dependencies",
    "is_refstring",
    "parse",
    "resolve",
    "resolve_metadata",
    "to_string",
]
