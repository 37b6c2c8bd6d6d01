"""In-memory tabular data with a canonical on-disk form.

A frame is an ordered list of ``(name, dtype)`` columns plus positional
rows. Supported dtypes: ``string``, ``int``, ``float``, ``bool`` and
``artifact_string`` (a relative path into the owning instance's artifact
directory). Frames persist as UTF-8 CSV with a YAML schema sidecar; the
CSV byte form is canonical, so equal frames serialize to equal bytes and
content digests are stable.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from . import _fsio
from .errors import ValidationError

DTYPES = ("string", "int", "float", "bool", "artifact_string")

_COLUMN_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _render_cell(value: Any, dtype: str) -> str:
    if dtype == "int":
        return str(value)
    if dtype == "float":
        return repr(float(value))
    if dtype == "bool":
        return "true" if value else "false"
    return str(value)


def _parse_cell(text: str, dtype: str) -> Any:
    try:
        if dtype == "int":
            return int(text)
        if dtype == "float":
            return float(text)
    except ValueError:
        raise ValidationError(f"cell {text!r} is not a valid {dtype}")
    if dtype == "bool":
        if text not in ("true", "false"):
            raise ValidationError(f"invalid bool cell {text!r}")
        return text == "true"
    return text


def check_cell(value: Any, dtype: str) -> bool:
    """Type conformance for one cell; bools are not ints and floats are finite."""
    if dtype == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if dtype == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        return math.isfinite(float(value))
    if dtype == "bool":
        return isinstance(value, bool)
    return isinstance(value, str)


@dataclass
class TabularData:
    columns: list[tuple[str, str]]
    rows: list[list[Any]] = field(default_factory=list)
    primary_key: list[str] | None = None

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def column_names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def dtype_of(self, column: str) -> str:
        for name, dtype in self.columns:
            if name == column:
                return dtype
        raise KeyError(column)

    def has_column(self, column: str) -> bool:
        return any(name == column for name, _ in self.columns)

    def column_values(self, column: str) -> list[Any]:
        idx = self.column_names.index(column)
        return [row[idx] for row in self.rows]

    def cell(self, row: int, column: str) -> Any:
        return self.rows[row][self.column_names.index(column)]

    def select_rows(self, positions: Iterable[int]) -> "TabularData":
        return TabularData(
            columns=list(self.columns),
            rows=[list(self.rows[i]) for i in positions],
            primary_key=list(self.primary_key) if self.primary_key else None,
        )

    def with_column(self, name: str, dtype: str, values: list[Any]) -> "TabularData":
        """Frame with ``name`` added or replaced; row count must be preserved."""
        if len(values) != self.n_rows:
            raise ValidationError(
                f"column {name!r} has {len(values)} values for {self.n_rows} rows"
            )
        names = self.column_names
        if name in names:
            idx = names.index(name)
            columns = list(self.columns)
            columns[idx] = (name, dtype)
            rows = [row[:idx] + [v] + row[idx + 1 :] for row, v in zip(self.rows, values)]
        else:
            columns = list(self.columns) + [(name, dtype)]
            rows = [row + [v] for row, v in zip(self.rows, values)]
        return TabularData(columns=columns, rows=rows, primary_key=self.primary_key)

    # -- validation ------------------------------------------------------

    def validate(self, artifact_dir: Path | None = None) -> None:
        """Raise ValidationError on any schema, dtype, key or artifact defect."""
        seen = set()
        for name, dtype in self.columns:
            if not _COLUMN_NAME.match(name):
                raise ValidationError(f"invalid column name {name!r}")
            if dtype not in DTYPES:
                raise ValidationError(f"unknown dtype {dtype!r} for column {name!r}")
            if name in seen:
                raise ValidationError(f"duplicate column name {name!r}")
            seen.add(name)
        if self.primary_key:
            missing = [c for c in self.primary_key if c not in seen]
            if missing:
                raise ValidationError(f"primary key columns not in frame: {missing}")
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValidationError(f"row {i} has {len(row)} cells, expected {width}")
            for (name, dtype), value in zip(self.columns, row):
                if not check_cell(value, dtype):
                    raise ValidationError(
                        f"row {i} column {name!r}: {value!r} is not a valid {dtype}"
                    )
                if dtype == "artifact_string":
                    if artifact_dir is None:
                        continue
                    target = artifact_dir / value
                    if not target.is_file():
                        raise ValidationError(
                            f"artifact_string {value!r} does not resolve inside the artifact directory"
                        )
        if self.primary_key:
            idxs = [self.column_names.index(c) for c in self.primary_key]
            tuples = set()
            for i, row in enumerate(self.rows):
                key = tuple(row[j] for j in idxs)
                if key in tuples:
                    raise ValidationError(f"duplicate primary key tuple {key!r} at row {i}")
                tuples.add(key)

    # -- serialization ---------------------------------------------------

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.column_names)
        for row in self.rows:
            writer.writerow(
                [_render_cell(v, dtype) for (_, dtype), v in zip(self.columns, row)]
            )
        return buf.getvalue().encode("utf-8")

    @classmethod
    def from_csv_bytes(cls, data: bytes, schema: dict) -> "TabularData":
        columns = [(c["name"], c["dtype"]) for c in schema["columns"]]
        primary_key = schema.get("primary_key") or None
        reader = csv.reader(io.StringIO(data.decode("utf-8")))
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("dataframe file has no header row")
        if header != [name for name, _ in columns]:
            raise ValidationError("dataframe header does not match schema")
        rows = []
        for raw in reader:
            rows.append([_parse_cell(t, dtype) for (_, dtype), t in zip(columns, raw)])
        return cls(columns=columns, rows=rows, primary_key=primary_key)

    def schema_doc(self) -> dict:
        return {
            "format_version": _fsio.FORMAT_VERSION,
            "columns": [{"name": n, "dtype": d} for n, d in self.columns],
            "primary_key": list(self.primary_key) if self.primary_key else [],
        }

    def to_json_doc(self) -> dict:
        return {
            "format_version": _fsio.FORMAT_VERSION,
            "columns": [{"name": n, "dtype": d} for n, d in self.columns],
            "primary_key": list(self.primary_key) if self.primary_key else [],
            "rows": [list(row) for row in self.rows],
        }

    @classmethod
    def from_json_doc(cls, doc: dict) -> "TabularData":
        return cls(
            columns=[(c["name"], c["dtype"]) for c in doc["columns"]],
            rows=[list(r) for r in doc["rows"]],
            primary_key=doc.get("primary_key") or None,
        )

    # -- content identity --------------------------------------------------

    def data_digest(self, artifact_dir: Path | None = None) -> str:
        """Digest over canonical CSV bytes plus sorted (name, hash) artifact pairs."""
        h = _fsio.sha256_bytes(self.to_csv_bytes())
        parts = [h]
        if artifact_dir is not None and artifact_dir.exists():
            for path in _fsio.walk_files(artifact_dir):
                rel = path.relative_to(artifact_dir).as_posix()
                parts.append(f"{rel}:{_fsio.sha256_file(path)}")
        return _fsio.sha256_bytes("\n".join(parts).encode("utf-8"))
