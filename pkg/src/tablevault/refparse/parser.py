"""Recursive-descent parser for table-reference strings.

Grammar (normative for this package):

    refstring := "<<" ref ">>"
    ref       := target ("." column)? ("#" facetpath)? filterlist?
    target    := IDENT ("@" INSTANCE_ID)? | "self"
    filterlist:= "[" filter ("," filter)* "]"
    filter    := (key "::")? fvalue
    key       := "index" | "operation" | IDENT
    fvalue    := term | slice | refstring
    slice     := term? ":" term?
    term      := INT | STRING | selfterm | keyword
    selfterm  := "self.index" (("+"|"-") INT)? | "self." IDENT
    keyword   := "~artifact_folder~" | "~id~"

Whitespace between tokens is insignificant. Table identifiers allow
dashes (``document-store``); column identifiers do not, which keeps
``self.index-5`` unambiguous. A whole argument may also be a bare
keyword ``~name~`` with no angle brackets.
"""

from __future__ import annotations

import functools
import re
from typing import Union

from ..errors import ParseError
from .ast import (
    KEYWORD_NAMES,
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

_TABLE_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*")
_COLUMN_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_FACET_SEG = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*")
# timestamp-form ids may contain a dot; anything else must be dot-free so
# that a trailing ".column" stays unambiguous
_INSTANCE_ID = re.compile(r"[0-9]{8}T[0-9]{6}\.[0-9]{6}_[a-z0-9]+|[A-Za-z0-9][A-Za-z0-9_\-]*")
_INT = re.compile(r"-?[0-9]+")
_OFFSET = re.compile(r"[+\-][0-9]+")
_KEY = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*::")


class _Cursor:
    __slots__ = ("text", "pos")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str) -> ParseError:
        return ParseError(message, offset=self.pos)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self, lit: str) -> bool:
        return self.text.startswith(lit, self.pos)

    def eat(self, lit: str) -> None:
        if not self.peek(lit):
            raise self.error(f"expected {lit!r}")
        self.pos += len(lit)

    def match(self, pattern: re.Pattern) -> str | None:
        m = pattern.match(self.text, self.pos)
        if m is None:
            return None
        self.pos = m.end()
        return m.group(0)

    def at_end(self) -> bool:
        return self.pos >= len(self.text)


def _parse_keyword(cur: _Cursor) -> KeywordTerm:
    start = cur.pos
    cur.eat("~")
    name = cur.match(_COLUMN_IDENT)
    if name is None:
        raise cur.error("expected keyword name after '~'")
    cur.eat("~")
    if name not in KEYWORD_NAMES:
        cur.pos = start
        raise cur.error(f"unknown keyword ~{name}~")
    return KeywordTerm(name)


def _parse_string(cur: _Cursor) -> ScalarTerm:
    quote = cur.text[cur.pos]
    end = cur.text.find(quote, cur.pos + 1)
    if end < 0:
        raise cur.error("unterminated string literal")
    value = cur.text[cur.pos + 1 : end]
    cur.pos = end + 1
    return ScalarTerm("string", value)


def _parse_term(cur: _Cursor):
    cur.skip_ws()
    if cur.peek("~"):
        return _parse_keyword(cur)
    if cur.pos < len(cur.text) and cur.text[cur.pos] in "\"'":
        return _parse_string(cur)
    if cur.peek("self."):
        cur.eat("self.")
        name = cur.match(_COLUMN_IDENT)
        if name is None:
            raise cur.error("expected identifier after 'self.'")
        if name == "index":
            offset = cur.match(_OFFSET)
            return SelfIndexTerm(int(offset) if offset else 0)
        return SelfColumnTerm(name)
    number = cur.match(_INT)
    if number is not None:
        return ScalarTerm("int", int(number))
    raise cur.error("expected term")


def _parse_fvalue(cur: _Cursor):
    cur.skip_ws()
    if cur.peek("<<"):
        return NestedRef(_parse_refstring(cur))
    # slice with empty lower bound
    if cur.peek(":") and not cur.peek("::"):
        cur.eat(":")
        cur.skip_ws()
        if cur.peek("]") or cur.peek(","):
            return SliceTerm(None, None)
        return SliceTerm(None, _parse_term(cur))
    term = _parse_term(cur)
    cur.skip_ws()
    if cur.peek(":") and not cur.peek("::"):
        cur.eat(":")
        cur.skip_ws()
        if cur.peek("]") or cur.peek(",") or cur.at_end():
            return SliceTerm(term, None)
        return SliceTerm(term, _parse_term(cur))
    return term


def _parse_filter(cur: _Cursor) -> Filter:
    cur.skip_ws()
    m = _KEY.match(cur.text, cur.pos)
    key = None
    if m is not None:
        key = m.group(1)
        cur.pos = m.end()
    value = _parse_fvalue(cur)
    return Filter(key, value)


def _parse_refstring(cur: _Cursor) -> RefExpr:
    start = cur.pos
    cur.eat("<<")
    cur.skip_ws()
    if cur.peek("self") and not _TABLE_IDENT.match(cur.text, cur.pos + 4):
        table = "self"
        cur.pos += 4
    else:
        table = cur.match(_TABLE_IDENT)
        if table is None:
            raise cur.error("expected table name or 'self'")
    instance = None
    if cur.peek("@"):
        cur.eat("@")
        instance = cur.match(_INSTANCE_ID)
        if instance is None:
            raise cur.error("expected instance id after '@'")
    column = None
    if cur.peek("."):
        cur.eat(".")
        column = cur.match(_COLUMN_IDENT)
        if column is None:
            raise cur.error("expected column name after '.'")
    facet = None
    if cur.peek("#"):
        cur.eat("#")
        segs = []
        seg = cur.match(_FACET_SEG)
        if seg is None:
            raise cur.error("expected facet name after '#'")
        segs.append(seg)
        while cur.peek("."):
            cur.eat(".")
            seg = cur.match(_FACET_SEG)
            if seg is None:
                raise cur.error("expected facet path segment after '.'")
            segs.append(seg)
        facet = tuple(segs)
    filters: list[Filter] = []
    cur.skip_ws()
    if cur.peek("["):
        cur.eat("[")
        while True:
            filters.append(_parse_filter(cur))
            cur.skip_ws()
            if cur.peek(","):
                cur.eat(",")
                continue
            cur.eat("]")
            break
    cur.skip_ws()
    cur.eat(">>")
    return RefExpr(
        table=table,
        instance=instance,
        column=column,
        facet=facet,
        filters=tuple(filters),
        raw=cur.text[start : cur.pos],
    )


@functools.lru_cache(maxsize=4096)
def parse(source: str) -> Union[RefExpr, Keyword]:
    """Parse one reference string or bare keyword.

    Raises ParseError (with byte offset) on unbalanced delimiters, unknown
    keywords, malformed slices or trailing garbage.
    """
    cur = _Cursor(source)
    cur.skip_ws()
    if cur.peek("~"):
        term = _parse_keyword(cur)
        cur.skip_ws()
        if not cur.at_end():
            raise cur.error("unexpected text after keyword")
        return Keyword(term.name, raw=source)
    if not cur.peek("<<"):
        raise cur.error("reference must start with '<<' or '~'")
    expr = _parse_refstring(cur)
    cur.skip_ws()
    if not cur.at_end():
        raise cur.error("unexpected text after '>>'")
    return expr


def is_refstring(value: object) -> bool:
    """True when a builder argument value is written in reference syntax.

    Anything opening with ``<<`` is reference-intended (so a malformed
    reference fails loudly at load time instead of passing through as a
    literal); a bare ``~name~`` is keyword-intended.
    """
    if not isinstance(value, str):
        return False
    text = value.strip()
    if text.startswith("<<"):
        return True
    return (
        len(text) > 2
        and text.startswith("~")
        and text.endswith("~")
        and "~" not in text[1:-1]
    )
